"""Keyed random streams, fading-channel models and thermal noise.

Every random draw in the simulator comes from a stream returned by
``derive_stream``. A stream is a pure function of its ``StreamKey``: the key
fields are hashed by ``numpy.random.SeedSequence`` into the key of a Philox
counter-based generator, so the order in which workers consume streams can
never change a result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Mapping

import numpy as np
from scipy import integrate, special, stats

SEED_MODULUS = 2**64

# Client slot reserved for draws that belong to the server (noise, sign flips).
SERVER_CLIENT = 2**32 - 1

RAYLEIGH_UNIT_MEAN_SCALE = math.sqrt(2.0 / math.pi)
DEFAULT_NAKAGAMI_SHAPE = 2.0
TAIL_REL_TOL = 1e-8

_TINY = np.finfo(float).tiny


class ChannelModelError(ValueError):
    """Raised when a channel model is built with invalid parameters."""

    pass


class Purpose(IntEnum):
    FADING = 1
    NOISE = 2
    SHUFFLE = 3
    CSI_ERROR = 4
    SIGNFLIP = 5
    DATA = 6
    PROBE = 7
    ATTACK = 8


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    round: int
    client: int
    purpose: Purpose
    index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < SEED_MODULUS:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")
        if self.client < 0:
            raise ValueError(f"client must be >= 0, got {self.client}")
        if self.index < 0:
            raise ValueError(f"index must be >= 0, got {self.index}")
        object.__setattr__(self, "purpose", Purpose(self.purpose))


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Return the generator owned by ``key``; equal keys give identical sequences."""
    seq = np.random.SeedSequence(
        entropy=key.master_seed,
        spawn_key=(key.round, key.client, int(key.purpose), key.index),
    )
    return np.random.Generator(np.random.Philox(seq))


def stream_for(
    master_seed: int, round: int, client: int, purpose: Purpose, index: int = 0
) -> np.random.Generator:
    """Shorthand for ``derive_stream(StreamKey(...))``."""
    return derive_stream(StreamKey(master_seed, round, client, purpose, index))


#################
# Fading models #
#################


class ChannelFamily(str, Enum):
    DEGENERATE = "degenerate"
    RAYLEIGH = "rayleigh"
    NAKAGAMI = "nakagami"


def _unit_mean_spread(shape: float) -> float:
    # Omega such that E[c] = 1 for Nakagami(m, Omega)
    ratio = math.exp(special.gammaln(shape) - special.gammaln(shape + 0.5))
    return shape * ratio**2


@dataclass(frozen=True)
class ChannelModel:
    """Fading-gain distribution. Only the fields of ``family`` are used."""

    family: ChannelFamily = ChannelFamily.RAYLEIGH
    value: float = 1.0
    scale: float = RAYLEIGH_UNIT_MEAN_SCALE
    shape: float = DEFAULT_NAKAGAMI_SHAPE
    spread: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", ChannelFamily(self.family))
        if self.family is ChannelFamily.DEGENERATE and not self.value > 0:
            raise ChannelModelError(f"degenerate gain must be positive, got {self.value}")
        if self.family is ChannelFamily.RAYLEIGH and not self.scale > 0:
            raise ChannelModelError(f"rayleigh scale must be positive, got {self.scale}")
        if self.family is ChannelFamily.NAKAGAMI:
            if not self.shape > 0:
                raise ChannelModelError(f"nakagami shape must be positive, got {self.shape}")
            if self.spread is None:
                object.__setattr__(self, "spread", _unit_mean_spread(self.shape))
            elif not self.spread > 0:
                raise ChannelModelError(f"nakagami spread must be positive, got {self.spread}")

    @classmethod
    def degenerate(cls, value: float = 1.0) -> ChannelModel:
        return cls(family=ChannelFamily.DEGENERATE, value=value)

    @classmethod
    def rayleigh(cls, scale: float = RAYLEIGH_UNIT_MEAN_SCALE) -> ChannelModel:
        return cls(family=ChannelFamily.RAYLEIGH, scale=scale)

    @classmethod
    def nakagami(cls, shape: float = DEFAULT_NAKAGAMI_SHAPE, spread: float | None = None) -> ChannelModel:
        return cls(family=ChannelFamily.NAKAGAMI, shape=shape, spread=spread)

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any]) -> ChannelModel:
        """Build a model from a config section; absent parameters take the unit-mean defaults."""
        family = ChannelFamily(section.get("family", ChannelFamily.RAYLEIGH.value))
        if family is ChannelFamily.DEGENERATE:
            return cls.degenerate(section.get("value") or 1.0)
        if family is ChannelFamily.RAYLEIGH:
            return cls.rayleigh(section.get("scale") or RAYLEIGH_UNIT_MEAN_SCALE)
        return cls.nakagami(section.get("shape") or DEFAULT_NAKAGAMI_SHAPE, section.get("spread"))

    def distribution(self):
        """Frozen scipy distribution of the gain (None for the point mass)."""
        if self.family is ChannelFamily.RAYLEIGH:
            return stats.rayleigh(scale=self.scale)
        if self.family is ChannelFamily.NAKAGAMI:
            return stats.nakagami(self.shape, scale=math.sqrt(self.spread))
        return None


def sample_fading(model: ChannelModel, stream: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. strictly positive gains."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if model.family is ChannelFamily.DEGENERATE:
        return np.full(count, float(model.value))
    if model.family is ChannelFamily.RAYLEIGH:
        draws = stream.rayleigh(model.scale, size=count)
    else:
        # |h| with |h|^2 ~ Gamma(m, Omega/m)
        draws = np.sqrt(stream.gamma(model.shape, model.spread / model.shape, size=count))
    return np.maximum(draws, _TINY)


def fading_moments(model: ChannelModel) -> tuple[float, float]:
    """Closed-form (mu_c, sigma_c^2) of the gain."""
    if model.family is ChannelFamily.DEGENERATE:
        return float(model.value), 0.0
    if model.family is ChannelFamily.RAYLEIGH:
        sigma = model.scale
        return sigma * math.sqrt(math.pi / 2.0), (2.0 - math.pi / 2.0) * sigma**2
    m, omega = model.shape, model.spread
    mean = math.exp(special.gammaln(m + 0.5) - special.gammaln(m)) * math.sqrt(omega / m)
    return mean, omega - mean**2


def tail_prob_beta(model: ChannelModel, nu: float) -> float:
    """beta_nu = P(|c - mu_c| > nu)."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if model.family is ChannelFamily.DEGENERATE:
        return 0.0
    mu, _ = fading_moments(model)
    upper, lower = mu + nu, mu - nu
    if model.family is ChannelFamily.RAYLEIGH:
        two_var = 2.0 * model.scale**2
        beta = math.exp(-(upper**2) / two_var)
        if lower > 0:
            beta += -math.expm1(-(lower**2) / two_var)
    else:
        pdf = model.distribution().pdf
        beta, _ = integrate.quad(pdf, upper, np.inf, epsrel=TAIL_REL_TOL, epsabs=0.0, limit=200)
        if lower > 0:
            below, _ = integrate.quad(pdf, 0.0, lower, epsrel=TAIL_REL_TOL, epsabs=0.0, limit=200)
            beta += below
    return float(min(1.0, max(0.0, beta)))


def fading_survival(model: ChannelModel, threshold: float) -> float:
    """P(c > threshold)."""
    if model.family is ChannelFamily.DEGENERATE:
        return 1.0 if model.value > threshold else 0.0
    if threshold <= 0:
        return 1.0
    if model.family is ChannelFamily.RAYLEIGH:
        return math.exp(-(threshold**2) / (2.0 * model.scale**2))
    return float(model.distribution().sf(threshold))


def cutoff_for_survival(model: ChannelModel, survival: float) -> float:
    """Cutoff c_th with P(c > c_th) = survival."""
    if not 0.0 < survival < 1.0:
        raise ValueError(f"survival probability must lie in (0, 1), got {survival}")
    if model.family is ChannelFamily.DEGENERATE:
        # every client passes; any cutoff below the point mass works
        return 0.5 * float(model.value)
    if model.family is ChannelFamily.RAYLEIGH:
        return model.scale * math.sqrt(-2.0 * math.log(survival))
    return float(model.distribution().isf(survival))


#################
# Thermal noise #
#################


@dataclass(frozen=True)
class NoiseSpec:
    sigma_z_sq: float
    d: int

    def __post_init__(self):
        if self.sigma_z_sq < 0:
            raise ValueError(f"sigma_z_sq must be >= 0, got {self.sigma_z_sq}")
        if self.d < 1:
            raise ValueError(f"noise dimension must be >= 1, got {self.d}")


def sample_awgn(spec: NoiseSpec, stream: np.random.Generator) -> np.ndarray:
    """xi ~ N(0, sigma_z^2 I_d); zero variance returns the exact zero vector."""
    if spec.sigma_z_sq == 0:
        return np.zeros(spec.d)
    return stream.normal(0.0, math.sqrt(spec.sigma_z_sq), size=spec.d)
