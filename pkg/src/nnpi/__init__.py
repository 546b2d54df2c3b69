"""Neural-network prediction intervals for regression targets.

Construction and evaluation of interval estimators: a bootstrap ensemble
baseline, a width/coverage interval loss trained by a genetic algorithm, and a
differentiable soft-coverage loss trained by gradient descent, deployable as a
single generalized model, per-subject personalized models, or per-cluster
hybrid models.
"""

from .bootstrap import BootstrapEnsemble, bootstrap_pi, bootstrap_train
from .data import (ColumnSchema, Dataset, NormParams, SubjectProfile, SynthConfig,
                   apply_normalization, kfold_split, load_dataset, minmax_normalize,
                   save_dataset, subject_profiles, synth_components, synth_generate)
from .errors import (ConfigError, DataWarning, EmptyInputError, NnpiError,
                     NumericalError, ParseError, SchemaError)
from .losses import (CaptureMask, LossLConfig, LossSConfig, capture_mask, loss_lube,
                     loss_soft, loss_soft_grad, mpiw_captured, picp_soft)
from .metrics import (PairwiseStats, PIQuality, mpiw, nmpiw,
                      pairwise_distance_stats, per_level_bounds, pi_quality, picp)
from .network import (IntervalBatch, MLPConfig, MLPParams, backward, flatten, forward,
                      init, load_checkpoint, param_count, save_checkpoint, unflatten)
from .optimizers import (GAConfig, GDConfig, TrainHistory, TrainRecord, evaluate_epoch,
                         ga_optimize, ga_train, gd_minimize, gd_train, mutation_count)
from .scenarios import (ClusterModel, JobArtifact, RunSettings, ScenarioReport,
                        SearchSpace, fit_clusters, kmeans, make_scenario_objective,
                        run_generalized, run_hybrid, run_personalized,
                        softening_sweep, tune)

__version__ = "0.1.0"
