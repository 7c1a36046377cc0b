"""Empirical estimators of the constants the bounds consume, and run-level measurements."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from config.sim_config import (
    DEFAULT_D_STAR,
    GRADIENT_BOUND_SAFETY,
    MIN_G_PROBE_ROUNDS,
    MIN_SIGMA_S_PROBES,
    SIGMA_S_RESAMPLES,
)
from engine.bounds import ConvergenceInputs, hardening_tail_bound
from engine.datamod import ClientShard, TrainingData
from engine.fedcore import LocalConfig, RoundRecord, TrimPolicy, local_update, pooled_samples, trim
from engine.models import ModelSpec, constants, grad, local_minimize
from engine.rngchan import (
    SERVER_CLIENT,
    ChannelModel,
    Purpose,
    fading_moments,
    sample_fading,
    stream_for,
    tail_prob_beta,
)
from engine.utils.filesystem import atomic_write_text
from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)


class EstimationError(ValueError):
    """Raised when an estimator is called with too few probes or inconsistent inputs."""

    pass


#########################
# Per-round measurement #
#########################


def hardening_discrepancy(
    grads: Sequence[np.ndarray], fading: Sequence[float], mu_c: float, N: int
) -> float:
    """|| (1/N) sum c_n g_n - (1/N) sum mu_c g_n ||."""
    if len(grads) != len(fading):
        raise EstimationError(f"{len(grads)} gradients but {len(fading)} fading gains")
    total = np.zeros_like(grads[0], dtype=float)
    for n in range(len(grads)):
        total = total + (fading[n] - mu_c) * grads[n]
    return float(np.linalg.norm(total / N))


def convergence_R(
    records: Sequence[RoundRecord],
    T: int | None = None,
    spec: ModelSpec | None = None,
    data: TrainingData | None = None,
    shards: Sequence[ClientShard] | None = None,
) -> float:
    """Time-averaged squared global-gradient norm over the first T rounds.

    The norms stored in the records are used unless ``spec``, ``data`` and
    ``shards`` are given, in which case the gradients are recomputed.
    """
    T = len(records) if T is None else T
    if T < 1 or len(records) < T:
        raise EstimationError(f"need records for rounds 0..{T - 1}, have {len(records)}")
    if spec is None:
        return float(np.mean([r.grad_norm_sq for r in records[:T]]))
    indices, labels = pooled_samples(data, shards)
    norms = []
    for record in records[:T]:
        g = grad(spec, record.w_t, data, indices, labels)
        norms.append(float(g @ g))
    return float(np.mean(norms))


def running_R(records: Sequence[RoundRecord]) -> np.ndarray:
    """R after each round (cumulative mean of the squared gradient norms)."""
    norms = np.array([r.grad_norm_sq for r in records], dtype=float)
    return np.cumsum(norms) / np.arange(1, norms.size + 1)


def min_grad_norm_sq(records: Sequence[RoundRecord], T: int | None = None) -> float:
    T = len(records) if T is None else T
    if T < 1 or len(records) < T:
        raise EstimationError(f"need records for rounds 0..{T - 1}, have {len(records)}")
    return float(min(r.grad_norm_sq for r in records[:T]))


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size < 2 or xs.shape != ys.shape:
        raise EstimationError("need at least two matching (x, y) points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise EstimationError("log-log fit needs positive values")
    return float(stats.linregress(np.log(xs), np.log(ys)).slope)


#########################
# Assumption constants  #
#########################


def estimate_gamma(
    spec: ModelSpec,
    data: TrainingData,
    shards: Sequence[ClientShard],
    tol: float = 1e-8,
    solver: str = "gd",
) -> float:
    """Gap between the global minimum and the mean of the local minima, clamped at 0."""
    indices, labels = pooled_samples(data, shards)
    _, f_star = local_minimize(spec, data, indices, labels, tol=tol, solver=solver)
    local = [
        local_minimize(spec, data, s.indices, s.targets(data), tol=tol, solver=solver)[1]
        for s in shards
    ]
    gamma = f_star - float(np.mean(local))
    if gamma < 0:
        if gamma < -10 * tol:
            logger.warning("heterogeneity estimate %.3e is negative beyond tolerance; clamping to 0", gamma)
        gamma = 0.0
    return gamma


def estimate_sigma_s(
    spec: ModelSpec,
    data: TrainingData,
    shard: ClientShard,
    probe_weights: Sequence[np.ndarray],
    B: int,
    stream: np.random.Generator,
    resamples: int = SIGMA_S_RESAMPLES,
    replace: bool = False,
) -> float:
    """Largest B * E||batch gradient - full gradient||^2 over the probe weights.

    Batches are drawn without replacement unless ``replace`` is set.
    """
    if len(probe_weights) < MIN_SIGMA_S_PROBES:
        raise EstimationError(f"need at least {MIN_SIGMA_S_PROBES} probe weights, got {len(probe_weights)}")
    if not 1 <= B <= shard.M:
        raise EstimationError(f"batch size must lie in [1, {shard.M}], got {B}")
    if B == shard.M and not replace:
        return 0.0
    targets = shard.targets(data)
    best = 0.0
    for w in probe_weights:
        full = grad(spec, w, data, shard.indices, targets)
        total = 0.0
        for _ in range(resamples):
            positions = stream.choice(shard.M, size=B, replace=replace)
            batch = grad(spec, w, data, shard.indices[positions], None if targets is None else targets[positions])
            deviation = batch - full
            total += float(deviation @ deviation)
        best = max(best, B * total / resamples)
    return best


def estimate_G(
    spec: ModelSpec,
    data: TrainingData,
    shard: ClientShard,
    cfg: LocalConfig,
    probe_weights: Sequence[np.ndarray],
    probe_rounds: int,
    stream: np.random.Generator,
    trim_policy: TrimPolicy | None = None,
) -> float:
    """Safety-scaled largest mean squared norm of the uploaded (accumulated) gradient."""
    if probe_rounds < MIN_G_PROBE_ROUNDS:
        raise EstimationError(f"need at least {MIN_G_PROBE_ROUNDS} probe rounds, got {probe_rounds}")
    if len(probe_weights) == 0:
        raise EstimationError("need at least one probe weight")
    policy = trim_policy or TrimPolicy()
    best = 0.0
    for w in probe_weights:
        total = 0.0
        for _ in range(probe_rounds):
            g = trim(local_update(spec, data, shard, w, cfg, stream), policy)
            total += float(g @ g)
        best = max(best, total / probe_rounds)
    return GRADIENT_BOUND_SAFETY * best


def expand_probe_weights(
    weights: Sequence[np.ndarray], count: int, stream: np.random.Generator, scale: float = 0.1
) -> list[np.ndarray]:
    """Pad ``weights`` to ``count`` entries with Gaussian perturbations of them."""
    if len(weights) == 0:
        raise EstimationError("need at least one base weight")
    out = [np.asarray(w, dtype=float) for w in weights]
    base = len(out)
    while len(out) < count:
        anchor = out[len(out) % base]
        out.append(anchor + scale * stream.standard_normal(anchor.shape))
    return out


############################
# Privacy variance probing #
############################


def signflip_signs(stream: np.random.Generator, d: int) -> np.ndarray:
    return 1.0 - 2.0 * stream.integers(0, 2, size=d)


def signflip_preprocess(g: np.ndarray, sign_stream: np.random.Generator) -> np.ndarray:
    """Multiply entrywise by i.i.d. random signs."""
    g = np.asarray(g, dtype=float)
    return g * signflip_signs(sign_stream, g.size)


@dataclass
class EntryVarianceProbe:
    variances: np.ndarray  # N x d*
    coordinates: np.ndarray
    redraws: int
    selection: str


def entry_variance_probe(
    spec: ModelSpec,
    data: TrainingData,
    shards: Sequence[ClientShard],
    w_t: np.ndarray,
    cfg: LocalConfig,
    channel: ChannelModel,
    master_seed: int,
    round_index: int = 0,
    redraws: int = 100,
    d_star: int | None = None,
) -> EntryVarianceProbe:
    """Per-client, per-entry variances of the sign-flipped faded accumulated gradients at w_t.

    Fading and batch order are redrawn; the sign pattern is fixed for the
    round. The d* coordinates with the largest total variance are kept.
    """
    if redraws < 2:
        raise EstimationError(f"variance probing needs at least 2 redraws, got {redraws}")
    if redraws < 100:
        logger.warning("only %d redraws for entry variance probing; estimates will be noisy", redraws)
    d = spec.dim
    d_star = min(d, DEFAULT_D_STAR) if d_star is None else d_star
    if not 1 <= d_star <= d:
        raise EstimationError(f"d_star must lie in [1, {d}], got {d_star}")
    signs = signflip_signs(stream_for(master_seed, round_index, SERVER_CLIENT, Purpose.SIGNFLIP), d)

    variances = np.empty((len(shards), d))
    for row, shard in enumerate(shards):
        samples = np.empty((redraws, d))
        for r in range(redraws):
            order = stream_for(master_seed, round_index, shard.client_id, Purpose.SHUFFLE, index=r + 1)
            gain_stream = stream_for(master_seed, round_index, shard.client_id, Purpose.FADING, index=r + 1)
            gain = sample_fading(channel, gain_stream, 1)[0]
            samples[r] = signs * gain * local_update(spec, data, shard, w_t, cfg, order)
        variances[row] = samples.var(axis=0, ddof=1)

    coordinates = np.argsort(-variances.sum(axis=0), kind="stable")[:d_star]
    return EntryVarianceProbe(
        variances=variances[:, coordinates],
        coordinates=coordinates,
        redraws=redraws,
        selection=f"top-{d_star} coordinates by summed variance",
    )


########################
# Channel-hardening MC #
########################


@dataclass
class TailCheck:
    nu: float
    eps: float
    frequency: float
    bound: float
    offset: float
    beta_nu: float
    G: float


def hardening_tail_frequency(
    grads: np.ndarray,
    channel: ChannelModel,
    nu: float,
    eps: float,
    trials: int,
    stream: np.random.Generator,
    entry: int = 0,
) -> TailCheck:
    """Monte-Carlo frequency of the one-sided hardening deviation event for one entry.

    The event is (1/N) sum (c_n - mu_c) g_{n,entry} >= eps + 2 nu beta^N G with
    G the largest client gradient norm.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.ndim != 2:
        raise EstimationError("grads must be an N x d matrix")
    N = grads.shape[0]
    mu_c, _ = fading_moments(channel)
    beta = tail_prob_beta(channel, nu)
    G = float(np.max(np.linalg.norm(grads, axis=1)))
    if not G > 0:
        raise EstimationError("gradients must not all be zero")
    offset, bound = hardening_tail_bound(nu, beta, G, N, eps)
    gains = sample_fading(channel, stream, trials * N).reshape(trials, N)
    deviation = (gains - mu_c) @ grads[:, entry] / N
    frequency = float(np.mean(deviation >= eps + offset))
    return TailCheck(nu, eps, frequency, bound, offset, beta, G)


##############################
# Bundled constant estimates #
##############################


@dataclass
class ConstantEstimates:
    L: float
    lam: float
    Gamma_hat: float
    sigma_s_sq_hat: list[float]
    G_sq_hat: list[float]
    entry_vars: list[list[float]] | None = None
    provenance: dict = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        values = [self.Gamma_hat, *self.sigma_s_sq_hat, *self.G_sq_hat]
        if any(v < 0 for v in values):
            raise EstimationError("estimated constants must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> ConstantEstimates:
        try:
            return cls(**payload)
        except TypeError as exc:
            raise EstimationError(f"malformed constants payload: {exc}") from exc


def estimate_constants(
    spec: ModelSpec,
    data: TrainingData,
    shards: Sequence[ClientShard],
    cfg: LocalConfig,
    probe_weights: Sequence[np.ndarray],
    master_seed: int,
    tol: float = 1e-8,
    trim_policy: TrimPolicy | None = None,
    resamples: int = SIGMA_S_RESAMPLES,
    probe_rounds: int = MIN_G_PROBE_ROUNDS,
    channel: ChannelModel | None = None,
    d_star: int | None = None,
) -> ConstantEstimates:
    """Measure L, lambda, Gamma, per-client sigma_s^2 and G^2 (and optionally MI entry variances)."""
    indices, _ = pooled_samples(data, shards)
    base = constants(spec, data, indices)
    pad_stream = stream_for(master_seed, 0, SERVER_CLIENT, Purpose.PROBE, index=2)
    probes = expand_probe_weights(probe_weights, MIN_SIGMA_S_PROBES, pad_stream)

    if spec.strongly_convex:
        gamma = estimate_gamma(spec, data, shards, tol=tol)
        gamma_note = f"global and local minimizers to tol={tol:g}"
    else:
        gamma = 0.0
        gamma_note = "not estimated (objective not strongly convex)"

    sigma_s, g_sq = [], []
    for shard in shards:
        sigma_stream = stream_for(master_seed, 0, shard.client_id, Purpose.PROBE, index=0)
        g_stream = stream_for(master_seed, 0, shard.client_id, Purpose.PROBE, index=1)
        sigma_s.append(estimate_sigma_s(spec, data, shard, probes, cfg.B, sigma_stream, resamples=resamples))
        g_sq.append(estimate_G(spec, data, shard, cfg, probes, probe_rounds, g_stream, trim_policy))

    entry_vars = None
    if channel is not None:
        probe = entry_variance_probe(spec, data, shards, probes[0], cfg, channel, master_seed, d_star=d_star)
        entry_vars = probe.variances.tolist()

    logger.info(
        "constants: L=%.4g lambda=%.4g Gamma=%.4g max sigma_s^2=%.4g max G^2=%.4g",
        base.L, base.lam, gamma, max(sigma_s), max(g_sq),
    )
    return ConstantEstimates(
        L=base.L,
        lam=base.lam,
        Gamma_hat=gamma,
        sigma_s_sq_hat=sigma_s,
        G_sq_hat=g_sq,
        entry_vars=entry_vars,
        provenance={
            "Gamma": gamma_note,
            "sigma_s": f"max over {len(probes)} probes of {resamples} batch draws without replacement",
            "G": f"max over {len(probes)} probes of {probe_rounds} local updates x {GRADIENT_BOUND_SAFETY}",
            "entry_vars": "not probed" if channel is None else "sign-flipped faded gradients, 100 redraws",
        },
    )


def write_constants_file(estimates: ConstantEstimates, path: str | Path) -> Path:
    return atomic_write_text(Path(path), json.dumps(estimates.to_dict(), indent=2, sort_keys=True) + "\n")


def read_constants_file(path: str | Path) -> ConstantEstimates:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise EstimationError(f"cannot read constants file {path}: {exc}") from exc
    return ConstantEstimates.from_dict(payload)


def convergence_inputs_from_estimates(estimates: ConstantEstimates, **context) -> ConvergenceInputs:
    """ConvergenceInputs from measured constants; ``context`` overrides ``estimates.context``."""
    merged = {**estimates.context, **context}
    merged.setdefault("lam", estimates.lam)
    merged.setdefault("L", estimates.L)
    return ConvergenceInputs(
        Gamma=estimates.Gamma_hat,
        sigma_s_sq=list(estimates.sigma_s_sq_hat),
        G_sq=list(estimates.G_sq_hat),
        **merged,
    )
