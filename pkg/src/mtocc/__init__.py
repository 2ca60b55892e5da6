"""Multi-task one-class classification with kernel null-space regression."""

from .errors import (
    CorruptionError,
    EvaluationError,
    InputError,
    MigrationError,
    MTOCError,
    NumericalError,
    ParameterError,
    TrainingError,
)
from .kernels import median_heuristic_width, pairwise_sq_dist, rbf_gram, second_layer_kernel
from .linear import LinearHyperparams, train_linear
from .model import TrainedModel, TrainingTrace
from .nonlinear import NonlinearHyperparams, train_nonlinear
from .ocksr import auc, build_responses, fit_c_ocksr, fit_single
from .sparse import SparseHyperparams, train_sparse

__version__ = "0.1.0"
