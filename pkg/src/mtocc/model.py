"""Trained-model container, training traces and test-time scoring."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, ocksr
from .errors import InputError

OCKSR = "OCKSR"
C_OCKSR = "C-OCKSR"
LINEAR = "OCKSR-L"
NONLINEAR = "OCKSR-N"
SPARSE = "OCKSR-NS"
VARIANTS = (OCKSR, C_OCKSR, LINEAR, NONLINEAR, SPARSE)


@dataclass
class TrainingTrace:
    """Per-iteration record of an alternating optimisation run.

    ``objective[0]`` is the value after initialisation; each later entry is
    the value after one accepted outer iteration.
    """

    objective: list = field(default_factory=list)
    step_scale: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    sparsity: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return max(len(self.objective) - 1, 0)

    def to_dict(self):
        return {
            "objective": [float(q) for q in self.objective],
            "step_scale": [
                [float(v) for v in s] if isinstance(s, (list, tuple)) else float(s)
                for s in self.step_scale
            ],
            "warnings": list(self.warnings),
            "sparsity": list(self.sparsity),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            objective=list(d.get("objective", [])),
            step_scale=list(d.get("step_scale", [])),
            warnings=list(d.get("warnings", [])),
            sparsity=list(d.get("sparsity", [])),
            converged=bool(d.get("converged", False)),
        )


@dataclass
class TrainedModel:
    """Everything needed to score new samples.

    ``A`` holds the first-layer coefficients (``n x T``). For the linear
    variant ``B`` is the ``T x T`` structure matrix and ``C = A B`` the
    composed discriminant; for the non-linear variants ``B`` is ``n x T``
    and ``Y`` the training intermediate responses the second layer compares
    against.
    """

    variant: str
    A: np.ndarray
    B: np.ndarray = None
    Y: np.ndarray = None
    theta: float = None
    sigma: float = None
    X_train: np.ndarray = None
    target_means: np.ndarray = None
    trace: TrainingTrace = field(default_factory=TrainingTrace)
    fingerprint: str = ""

    def __setattr__(self, name, value):
        # one memory layout, so in-memory and reloaded models run identical
        # BLAS reductions
        if name in ("A", "B", "Y", "X_train", "target_means") and value is not None:
            value = np.ascontiguousarray(value, dtype=np.float64)
        object.__setattr__(self, name, value)

    @property
    def n_tasks(self):
        return self.A.shape[1]

    @property
    def C(self):
        if self.variant != LINEAR:
            raise AttributeError("composed discriminant only exists for OCKSR-L")
        return self.A @ self.B

    def responses_from_kernel(self, K_cross):
        """Final per-task responses for rows of ``K_cross`` (``m x n``)."""
        K_cross = np.asarray(K_cross, dtype=np.float64)
        if K_cross.ndim != 2 or K_cross.shape[1] != self.A.shape[0]:
            raise InputError(
                f"cross kernel must have {self.A.shape[0]} columns, got {K_cross.shape}"
            )
        if self.variant in (NONLINEAR, SPARSE):
            from .nonlinear import predict_nonlinear

            return predict_nonlinear(self, K_cross)
        if self.variant == LINEAR:
            return ocksr.project(K_cross, self.C)
        return ocksr.project(K_cross, self.A)

    def responses(self, X):
        if self.X_train is None or self.sigma is None:
            raise InputError("model lacks training features or kernel width")
        X = kernels.as_features(X)
        if X.shape[1] != self.X_train.shape[1]:
            raise InputError(
                f"expected {self.X_train.shape[1]} features, got {X.shape[1]}"
            )
        return self.responses_from_kernel(kernels.rbf_gram(X, self.sigma, self.X_train))

    def scores(self, X, task):
        """Dissimilarity of each row of ``X`` to the target class of ``task``."""
        if self.target_means is None:
            raise InputError("model has no scoring references")
        y = self.responses(X)[:, task]
        return ocksr.score_task(y, self.target_means[task])
