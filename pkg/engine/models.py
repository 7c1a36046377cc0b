"""Loss and gradient oracles for the quadratic and multinomial-logistic models."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg, optimize, special
from sklearn.metrics import accuracy_score

from config.sim_config import LOCAL_MINIMIZE_MAX_ITERS
from engine.datamod import Dataset, QuadraticProblem, TrainingData
from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)


class ModelError(ValueError):
    """Raised when a model spec does not fit the data or the requested operation."""

    pass


class ConvergenceError(RuntimeError):
    """Raised when a solver stops at its iteration cap; ``grad_norm`` is the last gradient norm."""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


class ModelKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    dim: int
    num_classes: int = 0
    l2_reg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.dim < 1:
            raise ModelError(f"parameter dimension must be >= 1, got {self.dim}")
        if self.kind is ModelKind.LOGISTIC:
            if self.num_classes < 2:
                raise ModelError("logistic model needs at least two classes")
            if self.dim % self.num_classes or self.dim // self.num_classes < 2:
                raise ModelError(
                    f"logistic dimension {self.dim} is not K*(feature_dim+1) for K={self.num_classes}"
                )
            if self.l2_reg < 0:
                raise ModelError(f"l2_reg must be >= 0, got {self.l2_reg}")

    @classmethod
    def quadratic(cls, dim: int) -> ModelSpec:
        return cls(ModelKind.QUADRATIC, dim)

    @classmethod
    def logistic(cls, feature_dim: int, num_classes: int, l2_reg: float = 0.0) -> ModelSpec:
        return cls(ModelKind.LOGISTIC, num_classes * (feature_dim + 1), num_classes, l2_reg)

    @property
    def feature_dim(self) -> int:
        return self.dim // self.num_classes - 1 if self.kind is ModelKind.LOGISTIC else self.dim

    @property
    def strongly_convex(self) -> bool:
        return self.kind is ModelKind.QUADRATIC or self.l2_reg > 0


@dataclass
class AssumptionConstants:
    L: float
    lam: float
    sigma_s_sq: list[float] = field(default_factory=list)
    G_sq: list[float] = field(default_factory=list)
    Gamma: float = 0.0

    def __post_init__(self):
        if not self.L >= self.lam >= 0:
            raise ModelError(f"need L >= lambda >= 0, got L={self.L}, lambda={self.lam}")
        if any(v < 0 for v in self.sigma_s_sq) or any(v < 0 for v in self.G_sq) or self.Gamma < 0:
            raise ModelError("variance and norm bounds must be non-negative")


def _check_fit(spec: ModelSpec, data: TrainingData) -> None:
    if spec.kind is ModelKind.QUADRATIC:
        if not isinstance(data, QuadraticProblem):
            raise ModelError("quadratic model needs a QuadraticProblem")
        if data.dim != spec.dim:
            raise ModelError(f"problem dimension {data.dim} != model dimension {spec.dim}")
    else:
        if not isinstance(data, Dataset):
            raise ModelError("logistic model needs a labelled Dataset")
        if data.feature_dim != spec.feature_dim or data.num_classes != spec.num_classes:
            raise ModelError("dataset shape does not match the logistic spec")


def _all_indices(data: TrainingData, indices) -> np.ndarray:
    if indices is None:
        return np.arange(data.size)
    return np.asarray(indices, dtype=np.int64)


#############
# Quadratic #
#############


def _quadratic_terms(problem: QuadraticProblem, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample-averaged Hessian and linear term over ``indices``."""
    weights = np.bincount(problem.owners[indices], minlength=problem.N) / indices.size
    hessian = np.tensordot(weights, problem.hessians, axes=1)
    target = problem.sample_targets[indices].mean(axis=0)
    return hessian, target


############
# Logistic #
############


def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _logits(spec: ModelSpec, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    weights = w.reshape(spec.num_classes, spec.feature_dim + 1)
    return _augment(features) @ weights.T


def _labels_for(data: Dataset, indices: np.ndarray, labels) -> np.ndarray:
    if labels is None:
        return data.labels[indices]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != indices.shape:
        raise ModelError("labels must align with indices")
    return labels


##############
# Public API #
##############


def loss(spec: ModelSpec, w: np.ndarray, data: TrainingData, indices=None, labels=None) -> float:
    """Mean per-sample loss over ``indices`` (all samples when None)."""
    _check_fit(spec, data)
    idx = _all_indices(data, indices)
    w = np.asarray(w, dtype=float)
    if spec.kind is ModelKind.QUADRATIC:
        hessian, target = _quadratic_terms(data, idx)
        return float(0.5 * w @ hessian @ w - target @ w)
    y = _labels_for(data, idx, labels)
    logits = _logits(spec, w, data.features[idx])
    nll = special.logsumexp(logits, axis=1) - logits[np.arange(idx.size), y]
    return float(nll.mean() + 0.5 * spec.l2_reg * (w @ w))


def grad(spec: ModelSpec, w: np.ndarray, data: TrainingData, indices=None, labels=None) -> np.ndarray:
    """Mean per-sample gradient over ``indices``."""
    _check_fit(spec, data)
    idx = _all_indices(data, indices)
    if idx.size == 0:
        raise ModelError("gradient needs at least one sample")
    w = np.asarray(w, dtype=float)
    if spec.kind is ModelKind.QUADRATIC:
        hessian, target = _quadratic_terms(data, idx)
        return hessian @ w - target
    y = _labels_for(data, idx, labels)
    augmented = _augment(data.features[idx])
    weights = w.reshape(spec.num_classes, spec.feature_dim + 1)
    probs = special.softmax(augmented @ weights.T, axis=1)
    probs[np.arange(idx.size), y] -= 1.0
    return (probs.T @ augmented / idx.size).reshape(-1) + spec.l2_reg * w


def constants(spec: ModelSpec, data: TrainingData, indices=None) -> AssumptionConstants:
    """Smoothness L and strong-convexity lambda of the objective over ``indices``."""
    _check_fit(spec, data)
    idx = _all_indices(data, indices)
    if spec.kind is ModelKind.QUADRATIC:
        hessian, _ = _quadratic_terms(data, idx)
        eigs = linalg.eigvalsh(hessian)
        return AssumptionConstants(L=float(eigs[-1]), lam=float(eigs[0]))
    augmented = _augment(data.features[idx])
    top = linalg.eigvalsh(augmented.T @ augmented / idx.size)[-1]
    return AssumptionConstants(L=float(0.5 * top + spec.l2_reg), lam=float(spec.l2_reg))


def local_minimize(
    spec: ModelSpec,
    data: TrainingData,
    indices=None,
    labels=None,
    tol: float = 1e-8,
    solver: str = "gd",
    max_iters: int = LOCAL_MINIMIZE_MAX_ITERS,
) -> tuple[np.ndarray, float]:
    """Minimizer and minimum of the objective restricted to ``indices``.

    Quadratics are solved exactly. Logistic models run full-batch gradient
    descent with step 1/L until the gradient norm drops to ``tol``;
    ``solver="lbfgs"`` warm-starts that descent from an L-BFGS solution.
    """
    _check_fit(spec, data)
    idx = _all_indices(data, indices)
    if spec.kind is ModelKind.QUADRATIC:
        hessian, target = _quadratic_terms(data, idx)
        w_star = linalg.solve(hessian, target, assume_a="pos")
        return w_star, loss(spec, w_star, data, idx)

    if not spec.strongly_convex:
        raise ModelError("local_minimize needs l2_reg > 0 for the logistic model")
    step = 1.0 / constants(spec, data, idx).L
    w = np.zeros(spec.dim)
    if solver == "lbfgs":
        result = optimize.minimize(
            lambda v: (loss(spec, v, data, idx, labels), grad(spec, v, data, idx, labels)),
            w,
            jac=True,
            method="L-BFGS-B",
            options={"gtol": tol * 0.1, "maxiter": 10_000},
        )
        w = result.x
    elif solver != "gd":
        raise ModelError(f"unknown solver '{solver}'")

    g = grad(spec, w, data, idx, labels)
    norm = float(np.linalg.norm(g))
    for _ in range(max_iters):
        if norm <= tol:
            break
        w = w - step * g
        g = grad(spec, w, data, idx, labels)
        norm = float(np.linalg.norm(g))
    else:
        if norm > tol:
            raise ConvergenceError(
                f"gradient descent stopped after {max_iters} iterations at |grad|={norm:.3e}", norm
            )
    return w, loss(spec, w, data, idx, labels)


def predict(spec: ModelSpec, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Most likely class per row."""
    if spec.kind is not ModelKind.LOGISTIC:
        raise ModelError("predict is defined for the logistic model only")
    return np.argmax(_logits(spec, np.asarray(w, dtype=float), np.asarray(features, dtype=float)), axis=1)


def accuracy(spec: ModelSpec, w: np.ndarray, dataset: Dataset) -> float:
    return float(accuracy_score(dataset.labels, predict(spec, w, dataset.features)))
