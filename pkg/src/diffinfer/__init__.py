"""Conditional diffusion models for confidence and prediction intervals."""
from .data import ColumnSchema, SplitSpec, load_csv, one_hot, real_data_run, split, write_csv
from .dataset import Dataset
from .diffusion import (DiffusionSchedule, TimeNoisePair, TimeNoisePairs, dsm_target,
                        empirical_loss, make_schedule, ou_coefficients, perturb)
from .errors import (ConfigError, DataError, DiffInferError, DivergenceError, InputError,
                     ShapeError, SingularityError)
from .experiments import (SimulationReport, SimulationSpec, gen_dataset, run_replications,
                          true_regression)
from .inference import (IntervalEstimate, SampleMoments, confidence_interval,
                        coverage_probability, mse_bias_variance, normal_quantile,
                        prediction_interval, sample_moments, studentized_stat, t_quantile)
from .kernels import BACKEND
from .nn import ScoreNetwork, adam_step, backward, drift, forward, init_network
from .sampler import em_step, generate, sample_one
from .training import TrainConfig, TrainedModel, train

__version__ = "0.1.0"
