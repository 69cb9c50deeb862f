"""popdice: learning the vector field of population dynamics from unpaired
time marginals with the discrete inverse continuity equation (DICE) loss, and
generating new sample populations from the learned field.
"""

import jax as _jax

_jax.config.update("jax_enable_x64", True)

from .grid import TimeGrid, central_weight, quadrature_weights
from .features import (FeatureMap, polynomial_features, random_fourier_features,
                       fourier_features)
from .field_model import (PotentialModel, LinearFeatureModel, MlpModel,
                          NodeConstantShift, Normalization, save_model,
                          load_model)
from .losses import (LossBatch, LossReport, NonFiniteLossError,
                     empirical_expectation, dice_loss, dice_loss_entropic,
                     dice_loss_parametric, am_loss, am_residual, kinetic_term,
                     draw_batch)
from .datagen import (MarginalDataset, AnalyticOracle, TimeCurve,
                      TrajectoryBlowupError, DatasetFormatError,
                      gen_stationary_gaussian, gen_known_potential,
                      gen_gaussian_analytic, gen_brownian, gen_chaotic_ode,
                      register_system, write_dataset, read_dataset,
                      read_dataset_csv)
from .train import (TrainConfig, TrainTrace, RankDeficiencyError, train,
                    solve_linear_dice, monitor_instability, cosine_lr,
                    weak_form_residual, write_trace_csv, read_trace_csv)
from .sampler import (PopulationTrajectory, IntegrationAbort, integrate_ode,
                      integrate_sde, write_trajectory, read_trajectory)
from .metrics import (MetricReport, SinkhornResult, relative_potential_error,
                      moments, kinetic_energy, w2_exact_1d,
                      sinkhorn_divergence, time_averaged_divergence,
                      split_half_baseline)

__version__ = "0.1.0"
