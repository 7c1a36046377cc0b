"""Closed-form evaluators for the privacy, channel-hardening and convergence bounds.

All mutual-information values are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)

_RATE_RTOL = 1e-9


class BoundError(ValueError):
    """Raised when a bound is evaluated outside its preconditions."""

    pass


########################
# Mutual information   #
########################


@dataclass
class MiBoundInputs:
    """Inputs of the general leakage bound.

    ``entry_vars`` is an N x d* matrix of per-entry variances of the
    preprocessed faded gradients, or a T x N x d* stack (one matrix per
    round). Row N-1 is the client whose leakage is bounded.
    """

    N: int
    d_star: int
    C_g: float
    sigma_z_sq: float
    entry_vars: np.ndarray

    def __post_init__(self):
        self.entry_vars = np.asarray(self.entry_vars, dtype=float)
        if self.N < 2:
            raise BoundError(f"N must be >= 2, got {self.N}")
        if self.d_star < 1:
            raise BoundError(f"d_star must be >= 1, got {self.d_star}")
        if self.C_g < 0 or self.sigma_z_sq < 0:
            raise BoundError("C_g and sigma_z_sq must be >= 0")
        if self.entry_vars.shape[-2:] != (self.N, self.d_star) or self.entry_vars.ndim not in (2, 3):
            raise BoundError(
                f"entry_vars must have shape ({self.N}, {self.d_star}) or (T, {self.N}, {self.d_star}), "
                f"got {self.entry_vars.shape}"
            )
        if np.any(self.entry_vars < 0):
            raise BoundError("entry variances must be >= 0")

    def round_matrix(self, t: int | None) -> np.ndarray:
        if self.entry_vars.ndim == 2:
            return self.entry_vars
        if t is None:
            raise BoundError("a round index is required for per-round entry variances")
        return self.entry_vars[t]


def _mi_split(inputs: MiBoundInputs, t: int | None) -> tuple[np.ndarray, np.ndarray]:
    variances = inputs.round_matrix(t)
    others = variances[:-1].sum(axis=0) + inputs.sigma_z_sq
    if np.any(others <= 0):
        raise BoundError("degenerate variance inputs")
    return variances[-1], others


def mi_bound_general(inputs: MiBoundInputs, t: int | None = None) -> float:
    excluded, others = _mi_split(inputs, t)
    log_ratio = np.log1p(excluded / others)
    return float(inputs.C_g * inputs.d_star / (inputs.N - 1) + 0.5 * log_ratio.sum())


def mi_bound_max_over_clients(inputs: MiBoundInputs, t: int | None = None) -> float:
    """Largest general bound over every choice of the excluded client."""
    variances = inputs.round_matrix(t)
    best = 0.0
    for n in range(inputs.N):
        order = np.r_[np.delete(np.arange(inputs.N), n), n]
        moved = MiBoundInputs(inputs.N, inputs.d_star, inputs.C_g, inputs.sigma_z_sq, variances[order])
        best = max(best, mi_bound_general(moved))
    return best


def mi_bound_large_n(inputs: MiBoundInputs, t: int | None = None) -> float:
    """First-order expansion of the log ratio, accurate when N is large."""
    excluded, others = _mi_split(inputs, t)
    return float(inputs.C_g * inputs.d_star / (inputs.N - 1) + 0.5 * np.sum(excluded / others))


def mi_bound_iid_noiseless(C_g: float, d_star: int, N: int) -> float:
    if N < 2:
        raise BoundError(f"N must be >= 2, got {N}")
    return C_g * d_star / (N - 1) - 0.5 * d_star * math.log1p(-1.0 / N)


def mi_bound_iid_noisy(C_g: float, d_star: int, N: int, sigma_t_sq, sigma_z_sq: float) -> float:
    """I.i.d. clients with per-entry variances ``sigma_t_sq`` (scalar or length d*)."""
    if N < 2:
        raise BoundError(f"N must be >= 2, got {N}")
    variances = np.broadcast_to(np.asarray(sigma_t_sq, dtype=float), (d_star,))
    others = (N - 1) * variances + sigma_z_sq
    if np.any(others <= 0):
        raise BoundError("degenerate variance inputs")
    return float(C_g * d_star / (N - 1) + 0.5 * np.log1p(variances / others).sum())


def nats_to_bits(value: float) -> float:
    return value / math.log(2.0)


######################
# Channel hardening  #
######################


def hardening_tail_bound(nu: float, beta_nu: float, G: float, N: int, eps: float) -> tuple[float, float]:
    """(threshold offset, probability bound) of the channel-hardening deviation event."""
    if not nu > 0 or not G > 0:
        raise BoundError("nu and G must be positive")
    if not 0.0 <= beta_nu <= 1.0:
        raise BoundError(f"beta_nu must lie in [0, 1], got {beta_nu}")
    if eps < 0 or N < 1:
        raise BoundError("need eps >= 0 and N >= 1")
    beta_n = beta_nu**N
    offset = 2.0 * nu * beta_n * G
    prob = beta_n + math.exp(-N * eps**2 / (2.0 * nu**2 * G**2))
    return offset, min(1.0, prob)


#####################
# Convergence rates #
#####################


@dataclass
class ConvergenceInputs:
    """Constants shared by the convergence bounds.

    Per-client lists may hold one value, which then stands for every client.
    """

    L: float
    lam: float
    d: int
    N: int
    E: int
    B: int
    eta_l: float
    mu_c: float = 1.0
    Gamma: float = 0.0
    sigma_z_sq: float = 0.0
    eta_0: float | None = None
    sigma_s_sq: list[float] = field(default_factory=lambda: [0.0])
    G_sq: list[float] = field(default_factory=lambda: [0.0])
    init_dist_sq: float = 0.0
    init_gap: float = 0.0
    S: float | None = None
    gamma_t: float = 1.0
    sigma_delta_sq: float = 0.0
    c_th: float | None = None
    delta_max: float = 0.0

    def __post_init__(self):
        if not self.L > 0 or self.lam < 0 or self.lam > self.L:
            raise BoundError(f"need L > 0 and 0 <= lambda <= L, got L={self.L}, lambda={self.lam}")
        if self.N < 1 or self.E < 1 or self.B < 1 or self.d < 1:
            raise BoundError("N, E, B and d must be >= 1")
        if not self.eta_l > 0 or not self.mu_c > 0:
            raise BoundError("eta_l and mu_c must be positive")
        for name in ("Gamma", "sigma_z_sq", "init_dist_sq", "init_gap", "sigma_delta_sq", "delta_max"):
            if getattr(self, name) < 0:
                raise BoundError(f"{name} must be >= 0")
        for name in ("sigma_s_sq", "G_sq"):
            values = list(getattr(self, name))
            if len(values) not in (1, self.N) or any(v < 0 for v in values):
                raise BoundError(f"{name} needs 1 or N non-negative values")
            setattr(self, name, values)

    def _client_sum(self, values: list[float]) -> float:
        return self.N * values[0] if len(values) == 1 else float(sum(values))

    @property
    def sum_sigma_s(self) -> float:
        return self._client_sum(self.sigma_s_sq)

    @property
    def sum_G(self) -> float:
        return self._client_sum(self.G_sq)

    def require_eta_0(self) -> float:
        if self.eta_0 is None or not self.eta_0 > 0:
            raise BoundError("this bound needs a positive eta_0")
        return self.eta_0


def cvx_fixed_lr_bound(inp: ConvergenceInputs, t: int) -> float:
    """Expected squared distance to w* after t rounds under the fixed blind schedule."""
    if not inp.lam > 0:
        raise BoundError("strong convexity (lambda > 0) required")
    if inp.eta_l > 1.0 / (4.0 * inp.L) * (1 + _RATE_RTOL):
        raise BoundError(f"eta_l={inp.eta_l} exceeds 1/(4L)={1.0 / (4.0 * inp.L)}")
    q = 1.0 - inp.lam * inp.eta_l
    contraction = q ** (t * inp.E) * inp.init_dist_sq
    noise = inp.d * inp.eta_l**2 * inp.sigma_z_sq / (inp.mu_c**2 * inp.N**2) / (1.0 - q**inp.E)
    drift = (inp.eta_l / inp.lam) * (
        6.0 * inp.L * inp.Gamma + (1.0 / inp.N + 2.0 * (inp.E - 1)) * inp.sum_sigma_s / (inp.N * inp.B)
    )
    return float(contraction + noise + drift)


def cvx_kappa(inp: ConvergenceInputs, strict: bool = True) -> float:
    """kappa of the decaying schedule; with ``strict`` off an eta_0 above 1/(4 mu_c L) is only logged."""
    eta_0 = inp.require_eta_0()
    if not inp.lam > 0:
        raise BoundError("strong convexity (lambda > 0) required")
    limit = 1.0 / (4.0 * inp.mu_c * inp.L)
    if eta_0 > limit * (1 + _RATE_RTOL):
        if strict:
            raise BoundError(f"eta_0={eta_0} exceeds 1/(4 mu_c L)={limit}")
        logger.warning("eta_0=%.4g exceeds 1/(4 mu_c L)=%.4g; evaluating kappa anyway", eta_0, limit)
    numerator = inp.mu_c**2 * eta_0**2 * (
        6.0 * inp.L * inp.Gamma
        + (2.0 * inp.N * (inp.E - 1) + 1.0) * inp.sum_sigma_s / (inp.N**2 * inp.B)
    )
    denominator = inp.lam * inp.mu_c * eta_0 - 1.0
    if denominator <= 0:
        if numerator > 0:
            raise BoundError("kappa undefined; increase eta_0")
        return inp.init_dist_sq
    return max(numerator / denominator, inp.init_dist_sq)


def cvx_decay_lr_bound(inp: ConvergenceInputs, t: int, strict: bool = True) -> float:
    """kappa / (1 + t) under the decaying blind schedule."""
    return cvx_kappa(inp, strict) / (1.0 + t)


def noncvx_fixed_lr_bound(inp: ConvergenceInputs, T: int) -> float:
    """Bound on the time-averaged squared gradient norm with eta_l = 1/L."""
    if T < 1:
        raise BoundError(f"T must be >= 1, got {T}")
    if not math.isclose(inp.eta_l, 1.0 / inp.L, rel_tol=_RATE_RTOL):
        raise BoundError(f"this bound needs eta_l = 1/L = {1.0 / inp.L}, got {inp.eta_l}")
    E, N = inp.E, inp.N
    return float(
        2.0 * inp.L * inp.init_gap / (T * E)
        + inp.d * inp.sigma_z_sq / (inp.mu_c**2 * N**2 * E)
        + inp.sum_sigma_s / (N**2 * inp.B * E)
        + (E - 1) * (2 * E + 5) * inp.sum_G / (6.0 * N)
    )


def noncvx_decay_lr_bound(inp: ConvergenceInputs, T: int) -> float:
    """Bound on the smallest squared gradient norm over T rounds under the decaying schedule."""
    if T < 2:
        raise BoundError(f"T must be >= 2, got {T}")
    eta_0 = inp.require_eta_0()
    E, N, L, mu = inp.E, inp.N, inp.L, inp.mu_c
    if not eta_0 < 1.0 / (mu * E * L):
        raise BoundError(f"eta_0={eta_0} must be below 1/(mu_c E L)={1.0 / (mu * E * L)}")
    log_t = math.log(T)
    bracket = (
        inp.d * inp.sigma_z_sq / (mu**2 * N**2 * E)
        + inp.sum_sigma_s / (N**2 * inp.B)
        + L**2 * eta_0**2 * mu**2 * math.pi**2 * E * (E - 1) * (2 * E - 1) * inp.sum_G / (90.0 * N)
    )
    return float(
        2.0 * inp.init_gap / (mu * eta_0 * E * log_t) + L * mu * eta_0 * math.pi**2 / (3.0 * log_t) * bracket
    )


def power_control_bound(inp: ConvergenceInputs, T: int) -> float:
    """Bound on the time-averaged squared gradient norm under truncated channel inversion."""
    if inp.S is None or not inp.S > 0:
        raise BoundError(f"expected participant count S must be positive, got {inp.S}")
    if inp.c_th is None or not inp.c_th > inp.delta_max:
        raise BoundError(f"need c_th > delta_max, got c_th={inp.c_th}, delta_max={inp.delta_max}")
    if T < 1 or inp.N < 2:
        raise BoundError("need T >= 1 and N >= 2")
    if not inp.gamma_t > 0:
        raise BoundError("gamma_t must be positive")
    E, N, S, sum_G = inp.E, inp.N, inp.S, inp.sum_G
    return float(
        2.0 * inp.L * inp.init_gap / (T * E)
        + inp.d * inp.sigma_z_sq / (S**2 * inp.gamma_t * E)
        + 2.0 * inp.sum_sigma_s / (N**2 * inp.B * E)
        + 2.0 * (E - 1) * (E + 1) * sum_G / (3.0 * N)
        + 2.0 * (N - S) * sum_G / (S * N * (N - 1))
        + E * inp.sigma_delta_sq * sum_G / (S * N * (inp.c_th - inp.delta_max) ** 2)
    )


def expected_participants(N: int, survival: float) -> float:
    """S = N * P(c > c_th)."""
    if not 0.0 <= survival <= 1.0:
        raise BoundError(f"survival probability must lie in [0, 1], got {survival}")
    return N * survival


def csi_error_variance(delta_max: float) -> float:
    """Variance of a uniform error on [-delta_max, delta_max]."""
    return delta_max**2 / 3.0


def local_steps_for_epochs(tau: float, M: int, B: int) -> int:
    """E = tau * M / B local steps for tau passes over M samples."""
    steps = int(round(tau * M / B))
    if steps < 1:
        raise BoundError(f"tau={tau} passes over M={M} with B={B} give no local step")
    return steps
