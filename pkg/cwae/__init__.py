"""cwae: conditional Wasserstein autoencoders for Bayesian inverse problems"""


from cwae.configuration import ModelConfig, PenaltyConfig, TrainConfig
from cwae.nn import Mlp, init_params, forward, backward, AdamState, adam_step
from cwae.divergence import (KernelPenaltyConfig, mmd2, median_bandwidth, Discriminator,
                             init_discriminator, js_penalty, disc_step)
from cwae.model import (LatentSpec, BlockTriangularModel, init_model, forward_variant,
                        assemble_loss, waec_loss, conditional_sample, joint_sample)
from cwae.train import TrainingDivergedError, train
from cwae.enkf import Ensemble, ObservationModel, enkf_update, lrenkf_update
from cwae.sir import DegeneratePosteriorError, SirConfig, sir_sample
from cwae.metrics import EmpiricalDistribution, w2_exact, w2_sliced, mse_rel
from cwae.conditional_cost import (DiscreteConditionalInstance, latent_conditional_cost,
                                   joint_cost, random_instance)
from cwae.problems import (Dataset, ManifoldProblem, SphericalProblem, ManifoldDX10,
                           ManifoldDX20, ManifoldDX30, SphericalFigure, generate)
from cwae.lbm import SimulationDivergedError, FlowProblem, gen_flow, physics_penalty
from cwae.report import RunConfig, EvalConfig, ExperimentReport, ReportRow
from cwae.experiment import run_experiment, table_configs
try:
    from cwae._version import __version__
except ModuleNotFoundError:
    pass  # not installed
