from setuptools import setup, find_packages
from pathlib import Path


this_directory = Path(__file__).resolve().parent
long_description = (this_directory / 'README.rst').read_text()


vis_require = ['matplotlib']
tests_require = ['pytest', 'pytest-benchmark', 'matplotlib']
dev_require = tests_require


setup(
    name='cwae',
    description='conditional Wasserstein autoencoders for Bayesian inverse problems',
    long_description=long_description,
    long_description_content_type='text/x-rst',
    use_scm_version={'write_to': 'cwae/_version.py'},
    setup_requires=['setuptools_scm'],
    packages=find_packages(include=['cwae', 'cwae.*']),
    python_requires='>=3.8',
    install_requires=[
        'jax>=0.4.7',
        'numpy',
        'scipy>=1.6',  # linprog highs-ds
    ],
    extras_require={
        'vis': vis_require,
        'tests': tests_require,
        'dev': dev_require,
    },
    entry_points={
        'console_scripts': ['cwae=cwae.cli:main'],
    },
)
