"""Federated round engine: local SGD, trimming, over-the-air aggregation and the server step.

One round broadcasts w_t, lets every client run E local SGD steps from it,
and uploads the accumulated local gradient. The multiple-access channel
weights each upload by its fading gain and adds receiver noise; the server
rescales the superposition and takes a global step.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from engine.datamod import ClientShard, Dataset, TrainingData
from engine.models import ModelKind, ModelSpec, accuracy, grad, loss
from engine.rngchan import (
    SERVER_CLIENT,
    ChannelModel,
    NoiseSpec,
    Purpose,
    fading_moments,
    fading_survival,
    sample_awgn,
    sample_fading,
    stream_for,
)
from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)


class TrainingConfigError(ValueError):
    """Raised when a training configuration violates its invariants."""

    pass


class DivergenceError(RuntimeError):
    """Raised when the global model stops being finite; ``round`` is the offending round."""

    def __init__(self, message: str, round: int):
        super().__init__(message)
        self.round = round


@dataclass(frozen=True)
class LocalConfig:
    E: int
    B: int
    eta_l: float

    def __post_init__(self):
        if self.E < 1:
            raise TrainingConfigError(f"local steps E must be >= 1, got {self.E}")
        if self.B < 1:
            raise TrainingConfigError(f"batch size B must be >= 1, got {self.B}")
        if not self.eta_l > 0:
            raise TrainingConfigError(f"eta_l must be positive, got {self.eta_l}")

    def check_shard(self, M: int) -> None:
        if self.B > M:
            raise TrainingConfigError(f"batch size B={self.B} exceeds local dataset size M={M}")


class TrimMode(str, Enum):
    NONE = "none"
    NORM_CLIP = "norm_clip"


@dataclass(frozen=True)
class TrimPolicy:
    mode: TrimMode = TrimMode.NONE
    budget: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", TrimMode(self.mode))
        if self.mode is TrimMode.NORM_CLIP and not (self.budget is not None and self.budget > 0):
            raise TrainingConfigError(f"norm clipping needs a positive budget, got {self.budget}")


class SchemeVariant(str, Enum):
    BLIND = "blind"
    TRUNCATED_INVERSION = "truncated_inversion"
    NOISELESS = "noiseless"


@dataclass(frozen=True)
class AggregationScheme:
    variant: SchemeVariant = SchemeVariant.BLIND
    c_th: float | None = None
    gamma_t: float = 1.0
    delta_max: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", SchemeVariant(self.variant))
        if self.variant is not SchemeVariant.TRUNCATED_INVERSION:
            return
        if self.c_th is None or not self.c_th > 0:
            raise TrainingConfigError(f"truncated inversion needs c_th > 0, got {self.c_th}")
        if not self.gamma_t > 0:
            raise TrainingConfigError(f"gamma_t must be positive, got {self.gamma_t}")
        if not 0 <= self.delta_max < self.c_th:
            raise TrainingConfigError(
                f"need 0 <= delta_max < c_th, got delta_max={self.delta_max}, c_th={self.c_th}"
            )


class ScheduleKind(str, Enum):
    FIXED_BLIND = "fixed_blind"
    DECAY_BLIND = "decay_blind"
    FIXED_INVERSION = "fixed_inversion"


@dataclass(frozen=True)
class LrSchedule:
    kind: ScheduleKind
    eta_0: float
    mu_c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not self.eta_0 > 0 or not self.mu_c > 0:
            raise TrainingConfigError("eta_0 and mu_c must be positive")

    def at(self, t: int) -> tuple[float, float]:
        return lr_schedule(self.kind, self.eta_0, self.mu_c, t)


@dataclass
class RoundRecord:
    t: int
    w_t: np.ndarray
    g_t: np.ndarray
    w_next: np.ndarray
    eta_t: float
    eta_l: float
    participants: np.ndarray
    fading: np.ndarray
    loss: float
    grad_norm_sq: float
    discrepancy: float
    empty_round: bool = False
    analytic_S: float | None = None
    dist_sq: float | None = None
    accuracy: float | None = None
    client_grads: list[np.ndarray] | None = None

    @property
    def num_participants(self) -> int:
        return int(self.participants.size)


@dataclass
class TrainingSetup:
    """Everything one training run needs.

    ``local.eta_l`` is only the validated template; the schedule sets the
    local step size of every round.
    """

    spec: ModelSpec
    data: TrainingData
    shards: list[ClientShard]
    w0: np.ndarray
    local: LocalConfig
    schedule: LrSchedule
    channel: ChannelModel
    sigma_z_sq: float
    rounds: int
    master_seed: int
    scheme: AggregationScheme = field(default_factory=AggregationScheme)
    trim_policy: TrimPolicy = field(default_factory=TrimPolicy)
    workers: int = 1
    w_star: np.ndarray | None = None
    test_set: Dataset | None = None
    keep_client_grads: bool = False

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=float)
        if self.w0.shape != (self.spec.dim,):
            raise TrainingConfigError(f"w0 must have shape ({self.spec.dim},), got {self.w0.shape}")
        if not self.shards:
            raise TrainingConfigError("training needs at least one client")
        for shard in self.shards:
            self.local.check_shard(shard.M)
        if self.rounds < 0:
            raise TrainingConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.sigma_z_sq < 0:
            raise TrainingConfigError("sigma_z_sq must be >= 0")
        if self.workers < 1:
            raise TrainingConfigError("workers must be >= 1")


##################
# Client updates #
##################


def run_local_sgd(
    spec: ModelSpec,
    data: TrainingData,
    shard: ClientShard,
    w_t: np.ndarray,
    cfg: LocalConfig,
    stream: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """E mini-batch SGD steps from ``w_t``; returns (accumulated gradient, final local iterate).

    The shard is shuffled into floor(M/B) batches which are visited in order;
    a fresh permutation is drawn whenever they run out.
    """
    cfg.check_shard(shard.M)
    per_pass = shard.M // cfg.B
    targets = shard.targets(data)
    w = np.array(w_t, dtype=float, copy=True)
    accumulated = np.zeros_like(w)
    order = stream.permutation(shard.M)
    cursor = 0
    for _ in range(cfg.E):
        if cursor == per_pass:
            order = stream.permutation(shard.M)
            cursor = 0
        positions = order[cursor * cfg.B : (cursor + 1) * cfg.B]
        cursor += 1
        g = grad(
            spec,
            w,
            data,
            shard.indices[positions],
            None if targets is None else targets[positions],
        )
        accumulated += g
        w = w - cfg.eta_l * g
    return accumulated, w


def local_update(
    spec: ModelSpec,
    data: TrainingData,
    shard: ClientShard,
    w_t: np.ndarray,
    cfg: LocalConfig,
    stream: np.random.Generator,
) -> np.ndarray:
    """Accumulated local gradient, equal to (w_t - w^E) / eta_l."""
    accumulated, _ = run_local_sgd(spec, data, shard, w_t, cfg, stream)
    return accumulated


def trim(g: np.ndarray, policy: TrimPolicy) -> np.ndarray:
    if policy.mode is TrimMode.NONE:
        return g
    norm = float(np.linalg.norm(g))
    if norm <= policy.budget:
        return g
    return g * (policy.budget / norm)


###############
# Aggregation #
###############


def aggregate_blind(
    grads: Sequence[np.ndarray], fading: Sequence[float], noise: np.ndarray, N: int
) -> np.ndarray:
    """g_t = (sum_n c_n g_n + xi) / N, summed in ascending client order."""
    if len(grads) != len(fading):
        raise TrainingConfigError(f"{len(grads)} gradients but {len(fading)} fading gains")
    total = np.zeros_like(noise, dtype=float)
    for n in range(len(grads)):
        total = total + fading[n] * grads[n]
    return (total + noise) / N


def sample_csi_error(stream: np.random.Generator, delta_max: float, size: int | None = None):
    """Channel-estimate error, uniform on [-delta_max, delta_max]."""
    if delta_max < 0:
        raise TrainingConfigError(f"delta_max must be >= 0, got {delta_max}")
    if delta_max == 0:
        return 0.0 if size is None else np.zeros(size)
    return stream.uniform(-delta_max, delta_max, size=size)


def aggregate_power_control(
    grads: Sequence[np.ndarray],
    true_fading: np.ndarray,
    csi_errors: np.ndarray,
    scheme: AggregationScheme,
    noise: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Truncated channel inversion; returns (g_t, participant indices).

    Clients whose estimated gain falls below c_th stay silent. An empty
    participant set yields a zero update.
    """
    true_fading = np.asarray(true_fading, dtype=float)
    estimated = true_fading + np.asarray(csi_errors, dtype=float)
    participants = np.flatnonzero(estimated >= scheme.c_th)
    if participants.size == 0:
        logger.warning("no client cleared the cutoff c_th=%.4g; skipping update", scheme.c_th)
        return np.zeros_like(noise, dtype=float), participants
    total = np.zeros_like(noise, dtype=float)
    for n in participants:
        total = total + (true_fading[n] / estimated[n]) * grads[n]
    return (total + noise / math.sqrt(scheme.gamma_t)) / participants.size, participants


#####################
# Server and driver #
#####################


def lr_schedule(kind: ScheduleKind, eta_0: float, mu_c: float, t: int) -> tuple[float, float]:
    """(eta_t, eta_l) for round t."""
    if not eta_0 > 0 or not mu_c > 0:
        raise TrainingConfigError("eta_0 and mu_c must be positive")
    kind = ScheduleKind(kind)
    if kind is ScheduleKind.FIXED_BLIND:
        return eta_0 / mu_c, eta_0
    if kind is ScheduleKind.DECAY_BLIND:
        eta_t = eta_0 / (1 + t)
        return eta_t, mu_c * eta_t
    return eta_0, eta_0


def server_step(w_t: np.ndarray, g_t: np.ndarray, eta_t: float) -> np.ndarray:
    if np.shape(w_t) != np.shape(g_t):
        raise TrainingConfigError(f"model shape {np.shape(w_t)} != gradient shape {np.shape(g_t)}")
    return w_t - eta_t * g_t


def pooled_samples(data: TrainingData, shards: Sequence[ClientShard]) -> tuple[np.ndarray, np.ndarray | None]:
    """Indices and (possibly corrupted) labels of the union of all shards."""
    indices = np.concatenate([s.indices for s in shards])
    targets = [s.targets(data) for s in shards]
    if any(t is None for t in targets):
        return indices, None
    return indices, np.concatenate(targets)


def run_training(setup: TrainingSetup) -> list[RoundRecord]:
    """Execute ``setup.rounds`` federated rounds; deterministic in ``master_seed``."""
    from engine.metrics import hardening_discrepancy

    spec, data, shards = setup.spec, setup.data, setup.shards
    N = len(shards)
    mu_c, _ = fading_moments(setup.channel)
    noise_spec = NoiseSpec(setup.sigma_z_sq, spec.dim)
    variant = setup.scheme.variant
    analytic_S = None
    if variant is SchemeVariant.TRUNCATED_INVERSION:
        analytic_S = N * fading_survival(setup.channel, setup.scheme.c_th)
    all_indices, all_labels = pooled_samples(data, shards)
    seed = setup.master_seed

    w = setup.w0.copy()
    records: list[RoundRecord] = []
    with ThreadPoolExecutor(max_workers=setup.workers) as pool:
        for t in range(setup.rounds):
            eta_t, eta_l = setup.schedule.at(t)
            cfg = replace(setup.local, eta_l=eta_l)

            def client_job(shard: ClientShard) -> np.ndarray:
                stream = stream_for(seed, t, shard.client_id, Purpose.SHUFFLE)
                return trim(local_update(spec, data, shard, w, cfg, stream), setup.trim_policy)

            grads = list(pool.map(client_job, shards))
            fading = np.array(
                [sample_fading(setup.channel, stream_for(seed, t, s.client_id, Purpose.FADING), 1)[0] for s in shards]
            )
            noise = sample_awgn(noise_spec, stream_for(seed, t, SERVER_CLIENT, Purpose.NOISE))

            if variant is SchemeVariant.BLIND:
                g = aggregate_blind(grads, fading, noise, N)
                participants = np.arange(N)
            elif variant is SchemeVariant.NOISELESS:
                g = aggregate_blind(grads, np.ones(N), np.zeros(spec.dim), N)
                participants = np.arange(N)
            else:
                csi = np.array(
                    [
                        sample_csi_error(stream_for(seed, t, s.client_id, Purpose.CSI_ERROR), setup.scheme.delta_max)
                        for s in shards
                    ]
                )
                g, participants = aggregate_power_control(grads, fading, csi, setup.scheme, noise)

            w_next = server_step(w, g, eta_t)
            if not np.all(np.isfinite(w_next)):
                raise DivergenceError(f"model diverged in round {t}", round=t)

            full = grad(spec, w, data, all_indices, all_labels)
            record = RoundRecord(
                t=t,
                w_t=w,
                g_t=g,
                w_next=w_next,
                eta_t=eta_t,
                eta_l=eta_l,
                participants=participants,
                fading=fading,
                loss=loss(spec, w, data, all_indices, all_labels),
                grad_norm_sq=float(full @ full),
                discrepancy=hardening_discrepancy(grads, fading, mu_c, N),
                empty_round=participants.size == 0,
                analytic_S=analytic_S,
                client_grads=grads if setup.keep_client_grads else None,
            )
            if setup.w_star is not None:
                record.dist_sq = float(np.sum((w - setup.w_star) ** 2))
            if setup.test_set is not None and spec.kind is ModelKind.LOGISTIC:
                record.accuracy = accuracy(spec, w, setup.test_set)
            records.append(record)
            if t % 50 == 0:
                logger.debug("round %d: loss=%.6g |grad|^2=%.3e", t, record.loss, record.grad_norm_sq)
            w = w_next
    return records
