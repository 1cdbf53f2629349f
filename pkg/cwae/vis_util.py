from pathlib import Path

import numpy as np
import matplotlib.pyplot as plt
try:
    shell = get_ipython().__class__.__name__
    if shell == 'ZMQInteractiveShell':
        import matplotlib_inline
        matplotlib_inline.backend_inline.set_matplotlib_formats('svg')
except NameError:
    pass  # if not plotting in Jupyter


def simshow(x, figsize=(6.3, 4.9), dpi=96, cmap='RdBu_r', norm=None, colorbar=True,
            interpolation='nearest', ax=None, **kwargs):
    """Plot a 2D field, e.g. a velocity component of a flow window, with ``imshow``.

    Parameters
    ----------
    x : ArrayLike
        2D field, indexed (x, y) as the lattice is.
    figsize : 2-tuple of float, optional
        Width and height in inches, if a new figure is created.
    dpi : float, optional
        Figure resolution in dots-per-inch.
    cmap : str or ``matplotlib.colors.Colormap``, optional
        For ``matplotlib.axes.Axes.imshow``.
    norm : ``matplotlib.colors.Normalize``, optional
        For ``matplotlib.axes.Axes.imshow``.
    colorbar : bool
        Whether to add a colorbar.
    interpolation : str, optional
        For ``matplotlib.axes.Axes.imshow``.
    ax : ``matplotlib.axes.Axes``, optional
        Axes to draw into. Default is a new figure.
    **kwargs :
        Other keyword arguments to be passed to ``matplotlib.axes.Axes.imshow``.

    Returns
    -------
    fig : ``matplotlib.figure.Figure``
    ax : ``matplotlib.axes.Axes``

    """
    x = np.asarray(x)

    if ax is None:
        fig, ax = plt.subplots(figsize=figsize, dpi=dpi)
    else:
        fig = ax.figure

    im = ax.imshow(
        x.T,
        origin='lower',
        cmap=cmap,
        norm=norm,
        interpolation=interpolation,
        **kwargs,
    )
    ax.set_axis_off()

    if colorbar:
        cb = fig.colorbar(im, ax=ax)
        cb.ax.tick_params(which='both', labelcolor='grey',
                          bottom=False, top=False, left=False, right=False)
        cb.outline.set_visible(False)

    return fig, ax


def savefig(fig, path):
    """Save a figure as SVG with a fixed date-free metadata, and close it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({'svg.hashsalt': 'cwae'}):
        fig.savefig(path, format='svg', bbox_inches='tight', metadata={'Date': None})
    plt.close(fig)
    return path


def spherical_panels(samples, ys, reference=None, panel=2.4, max_points=1000):
    """Scatter conditional samples in the plane against the circle of radius √y.

    Parameters
    ----------
    samples : dict of str to list of (N, 2) ArrayLike
        Samples of each method, one array per conditioning value.
    ys : sequence of float
        Conditioning values, one row of panels each.
    reference : list of (N, 2) ArrayLike, optional
        Oracle samples drawn in grey under every panel of the row.
    panel : float, optional
        Panel size in inches.
    max_points : int, optional
        Points drawn per panel.

    Returns
    -------
    fig : ``matplotlib.figure.Figure``
    axes : (len(ys), len(samples)) array of ``matplotlib.axes.Axes``

    """
    methods = list(samples)
    fig, axes = plt.subplots(nrows=len(ys), ncols=len(methods), squeeze=False,
                             figsize=(panel * len(methods), panel * len(ys)),
                             sharex=True, sharey=True)

    t = np.linspace(0, 2 * np.pi, num=256)
    for i, y in enumerate(ys):
        r = np.sqrt(max(float(y), 0.))
        for j, method in enumerate(methods):
            ax = axes[i, j]
            if reference is not None:
                ref = np.asarray(reference[i])[:max_points]
                ax.scatter(ref[:, 0], ref[:, 1], s=2, c='lightgrey', lw=0)
            x = np.asarray(samples[method][i])[:max_points]
            ax.scatter(x[:, 0], x[:, 1], s=2, c=f'C{j}', lw=0)
            ax.plot(r * np.cos(t), r * np.sin(t), c='k', ls='--', lw=1)
            ax.set_aspect('equal')
            ax.set_title(f'{method}, y = {float(y):g}', fontsize='small')

    return fig, axes


def bar_chart(summary, metric, group='d_X', figsize=(6.3, 3.5)):
    """Grouped bars of mean metric values with std error bars.

    Parameters
    ----------
    summary : list of dict
        Rows of ``ExperimentReport.aggregate``.
    metric : str
        Metric to plot.
    group : str, optional
        Summary key that groups the bars, one group of methods each.

    Returns
    -------
    fig : ``matplotlib.figure.Figure``
    ax : ``matplotlib.axes.Axes``

    """
    rows = [r for r in summary if r['metric'] == metric]
    groups = sorted({r[group] for r in rows})
    methods = sorted({r['method'] for r in rows})
    width = 0.8 / max(len(methods), 1)

    fig, ax = plt.subplots(figsize=figsize)
    for j, method in enumerate(methods):
        by_group = {r[group]: r for r in rows if r['method'] == method}
        mean = [float(by_group[g]['mean']) if g in by_group else np.nan for g in groups]
        std = [float(by_group[g]['std']) if g in by_group else 0. for g in groups]
        ax.bar(np.arange(len(groups)) + j * width, mean, width, yerr=std, label=method,
               color=f'C{j}')

    ax.set_xticks(np.arange(len(groups)) + 0.4 - width / 2,
                  labels=[f'{group} = {g}' for g in groups])
    ax.set_ylabel(metric)
    ax.legend(frameon=False, fontsize='small')

    return fig, ax


def flow_panels(truth, means, panel=2.4):
    """Speed heatmaps of the true window and each method's posterior mean.

    Parameters
    ----------
    truth : (2, m, m) ArrayLike
    means : dict of str to (2, m, m) ArrayLike

    """
    fields = {'truth': truth, **means}
    fig, axes = plt.subplots(ncols=len(fields), squeeze=False,
                             figsize=(panel * len(fields), panel))
    vmax = max(float(np.hypot(*np.asarray(f)).max()) for f in fields.values())

    for ax, (name, f) in zip(axes[0], fields.items()):
        simshow(np.hypot(*np.asarray(f)), ax=ax, cmap='inferno', colorbar=False,
                vmin=0, vmax=vmax)
        ax.set_title(name, fontsize='small')

    return fig, axes
