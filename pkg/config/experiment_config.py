"""Experiment files: JSON documents parsed into nested dataclasses.

Decoding rejects duplicate keys, unknown keys and ill-typed values; every
violation is reported with its dotted field path in a single ConfigError.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from config.sim_config import DEFAULT_WORKERS, OUTPUT_ROOT, SYSTEM_DEFAULTS


class ConfigError(ValueError):
    """Raised when an experiment file fails validation; ``errors`` lists every violation."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid experiment config:\n  " + "\n  ".join(errors))
        self.errors = errors


MODEL_KINDS = ("quadratic", "logistic")
DATA_SOURCES = ("synthetic", "quadratic", "csv")
SCHEMES = ("blind", "truncated_inversion", "noiseless")
SCHEDULES = ("fixed_blind", "decay_blind", "fixed_inversion")
ATTACKS = ("none", "noisy_label", "class_flip")
TRIM_MODES = ("none", "norm_clip")
STUDIES = ("training", "privacy", "tail")
OVERLAYS = ("cvx_fixed", "cvx_decay", "noncvx_fixed", "noncvx_decay", "power_control")


@dataclass
class ModelConfig:
    kind: str = "logistic"
    l2_reg: float = 0.01


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    num_classes: int = 10
    feature_dim: int = 20
    samples: int | None = None  # synthetic pool size; default 2 * max(N) * M
    separation: float = 3.0
    clients: int = SYSTEM_DEFAULTS["clients"]
    samples_per_client: int = 100
    dir_alpha: float = SYSTEM_DEFAULTS["dir_alpha"]
    test_fraction: float = 0.0
    dim: int = 5  # quadratic parameter dimension
    lam: float = 1.0
    L: float = 4.0
    heterogeneity: float = 1.0
    sample_spread: float = 0.0


@dataclass
class ChannelConfig:
    family: str = "rayleigh"
    value: float | None = None
    scale: float | None = None
    shape: float | None = None
    spread: float | None = None


@dataclass
class NoiseConfig:
    sigma_z_sq: float = 0.0


@dataclass
class SchemeConfig:
    variant: str = "blind"
    survival: float = SYSTEM_DEFAULTS["survival"]
    c_th: float | None = None
    gamma_t: float = 1.0
    delta_max: float = 0.0


@dataclass
class LocalSection:
    E: int | None = None  # default floor(M / B): one local epoch
    B: int = SYSTEM_DEFAULTS["batch_size"]


@dataclass
class ScheduleConfig:
    kind: str = "fixed_blind"
    eta_0: float | None = SYSTEM_DEFAULTS["learning_rate"]
    eta_over_L: float | None = None
    check_eta_0: bool = True  # false: cvx_decay is evaluated even when eta_0 > 1/(4 mu_c L)


@dataclass
class TrimConfig:
    mode: str = "none"
    budget: float | None = None


@dataclass
class AttackConfig:
    kind: str = "none"
    rho: float = 0.0
    noise_level: float = 0.0


@dataclass
class SweepConfig:
    clients: list[int] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    schemes: list[str] = field(default_factory=list)
    rho: list[float] = field(default_factory=list)
    noise_levels: list[float] = field(default_factory=list)
    dir_alpha: list[float] = field(default_factory=list)
    delta_max: list[float] = field(default_factory=list)


@dataclass
class EstimateConfig:
    enabled: bool = False
    resamples: int = 200
    probe_rounds: int = 10
    tol: float = 1e-8
    pilot_rounds: int = 20


@dataclass
class PrivacyConfig:
    clients: list[int] = field(default_factory=lambda: [2, 5, 10, 20, 50, 100, 200, 500])
    redraws: int = 100
    C_g: float = 0.0
    d_star: int | None = None
    noisy_sigma_z_sq: float = 1.0


@dataclass
class TailConfig:
    nu: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5])
    eps: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    trials: int = 100_000
    clients: int = 20


@dataclass
class OutputConfig:
    directory: str = ""
    emit_svg: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    study: str = "training"
    master_seed: int = 0
    rounds: int = SYSTEM_DEFAULTS["hardening_rounds"]
    workers: int = DEFAULT_WORKERS
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    local: LocalSection = field(default_factory=LocalSection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    trim: TrimConfig = field(default_factory=TrimConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    overlays: list[str] = field(default_factory=list)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    tail: TailConfig = field(default_factory=TailConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def local_steps(self) -> int:
        if self.local.E is not None:
            return self.local.E
        return max(1, self.data.samples_per_client // self.local.B)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory) if self.output.directory else OUTPUT_ROOT / self.name

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding the output location and worker count."""
        payload = self.to_dict()
        payload.pop("output")
        payload.pop("workers")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


############
# Decoding #
############


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict:
    out: dict = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError([f"duplicate key '{key}'"])
        out[key] = value
    return out


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_value(value: Any, hint: Any, path: str, errors: list[str]) -> Any:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        options = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_value(value, options[0], path, errors)
    if origin is list:
        if not isinstance(value, list):
            errors.append(f"{path}: expected a list, got {type(value).__name__}")
            return []
        (item_hint,) = typing.get_args(hint)
        return [_check_value(v, item_hint, f"{path}[{i}]", errors) for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if not (_is_number(value) and float(value).is_integer()):
            errors.append(f"{path}: expected an integer, got {value!r}")
            return value
        return int(value)
    if hint is float:
        if not _is_number(value) or not math.isfinite(value):
            errors.append(f"{path}: expected a finite number, got {value!r}")
            return value
        return float(value)
    if hint is str and not isinstance(value, str):
        errors.append(f"{path}: expected a string, got {value!r}")
    return value


def _build(cls: type, payload: Any, path: str, errors: list[str]):
    if not isinstance(payload, dict):
        errors.append(f"{path or '<root>'}: expected an object, got {type(payload).__name__}")
        return cls()
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in payload:
        if key not in known:
            errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name in known & payload.keys():
        child = f"{path}.{name}" if path else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, payload[name], child, errors)
        else:
            kwargs[name] = _check_value(payload[name], hint, child, errors)
    return cls(**kwargs)


##############
# Validation #
##############


def _choice(value: str, options: tuple[str, ...], path: str, errors: list[str]) -> None:
    if value not in options:
        errors.append(f"{path}: '{value}' is not one of {', '.join(options)}")


def _in_range(value, low, high, path: str, errors: list[str], low_open=False, high_open=False) -> None:
    if not _is_number(value):
        return
    too_low = value <= low if low_open else value < low
    too_high = value >= high if high_open else value > high
    if too_low or too_high:
        left, right = "(" if low_open else "[", ")" if high_open else "]"
        errors.append(f"{path}: {value} is outside {left}{low}, {high}{right}")


def validate(cfg: ExperimentConfig) -> list[str]:
    """Cross-field checks; returns every violation found."""
    errors: list[str] = []
    _choice(cfg.study, STUDIES, "study", errors)
    _in_range(cfg.master_seed, 0, 2**64 - 1, "master_seed", errors)
    _in_range(cfg.rounds, 0, math.inf, "rounds", errors)
    _in_range(cfg.workers, 1, math.inf, "workers", errors)

    _choice(cfg.model.kind, MODEL_KINDS, "model.kind", errors)
    _in_range(cfg.model.l2_reg, 0, math.inf, "model.l2_reg", errors)

    data = cfg.data
    _choice(data.source, DATA_SOURCES, "data.source", errors)
    if (cfg.model.kind == "quadratic") != (data.source == "quadratic"):
        errors.append(f"model.kind: '{cfg.model.kind}' cannot train on data.source '{data.source}'")
    if data.source == "csv" and not data.path:
        errors.append("data.path: required when data.source is 'csv'")
    _in_range(data.clients, 1, math.inf, "data.clients", errors)
    _in_range(data.samples_per_client, 1, math.inf, "data.samples_per_client", errors)
    _in_range(data.dir_alpha, 0, math.inf, "data.dir_alpha", errors, low_open=True)
    _in_range(data.test_fraction, 0, 1, "data.test_fraction", errors, high_open=True)
    if data.source != "quadratic":
        _in_range(data.num_classes, 2, math.inf, "data.num_classes", errors)
        _in_range(data.feature_dim, 1, math.inf, "data.feature_dim", errors)
    else:
        _in_range(data.dim, 1, math.inf, "data.dim", errors)
        _in_range(data.lam, 0, math.inf, "data.lam", errors, low_open=True)
        if _is_number(data.lam) and _is_number(data.L) and data.L < data.lam:
            errors.append(f"data.L: {data.L} is below data.lam ({data.lam})")
        _in_range(data.heterogeneity, 0, math.inf, "data.heterogeneity", errors)
        _in_range(data.sample_spread, 0, math.inf, "data.sample_spread", errors)

    _choice(cfg.channel.family, ("degenerate", "rayleigh", "nakagami"), "channel.family", errors)
    for name in ("value", "scale", "shape", "spread"):
        value = getattr(cfg.channel, name)
        if value is not None:
            _in_range(value, 0, math.inf, f"channel.{name}", errors, low_open=True)
    _in_range(cfg.noise.sigma_z_sq, 0, math.inf, "noise.sigma_z_sq", errors)

    scheme = cfg.scheme
    _choice(scheme.variant, SCHEMES, "scheme.variant", errors)
    _in_range(scheme.survival, 0, 1, "scheme.survival", errors, low_open=True, high_open=True)
    _in_range(scheme.gamma_t, 0, math.inf, "scheme.gamma_t", errors, low_open=True)
    _in_range(scheme.delta_max, 0, math.inf, "scheme.delta_max", errors)
    if scheme.c_th is not None and _is_number(scheme.c_th) and scheme.delta_max >= scheme.c_th:
        errors.append(f"scheme.delta_max: {scheme.delta_max} must stay below scheme.c_th ({scheme.c_th})")

    _in_range(cfg.local.B, 1, math.inf, "local.B", errors)
    if cfg.local.E is not None:
        _in_range(cfg.local.E, 1, math.inf, "local.E", errors)
    if _is_number(cfg.local.B) and _is_number(data.samples_per_client) and cfg.local.B > data.samples_per_client:
        errors.append(
            f"local.B: batch size {cfg.local.B} exceeds data.samples_per_client ({data.samples_per_client})"
        )

    schedule = cfg.schedule
    _choice(schedule.kind, SCHEDULES, "schedule.kind", errors)
    if (schedule.eta_0 is None) == (schedule.eta_over_L is None):
        errors.append("schedule: set exactly one of schedule.eta_0 and schedule.eta_over_L")
    for name in ("eta_0", "eta_over_L"):
        value = getattr(schedule, name)
        if value is not None:
            _in_range(value, 0, math.inf, f"schedule.{name}", errors, low_open=True)

    _choice(cfg.trim.mode, TRIM_MODES, "trim.mode", errors)
    if cfg.trim.mode == "norm_clip" and not (_is_number(cfg.trim.budget) and cfg.trim.budget > 0):
        errors.append("trim.budget: norm clipping needs a positive budget")

    _choice(cfg.attack.kind, ATTACKS, "attack.kind", errors)
    _in_range(cfg.attack.rho, 0, 1, "attack.rho", errors)
    _in_range(cfg.attack.noise_level, 0, 1, "attack.noise_level", errors)
    attacked = cfg.attack.kind != "none" or any(r > 0 for r in cfg.sweep.rho if _is_number(r))
    if attacked and cfg.model.kind != "logistic":
        errors.append("attack.kind: label attacks need the logistic model")

    sweep = cfg.sweep
    for i, n in enumerate(sweep.clients):
        _in_range(n, 1, math.inf, f"sweep.clients[{i}]", errors)
    for i, s in enumerate(sweep.seeds):
        _in_range(s, 0, 2**64 - 1, f"sweep.seeds[{i}]", errors)
    for i, s in enumerate(sweep.schemes):
        _choice(s, SCHEMES, f"sweep.schemes[{i}]", errors)
    for i, r in enumerate(sweep.rho):
        _in_range(r, 0, 1, f"sweep.rho[{i}]", errors)
    for i, r in enumerate(sweep.noise_levels):
        _in_range(r, 0, 1, f"sweep.noise_levels[{i}]", errors)
    for i, a in enumerate(sweep.dir_alpha):
        _in_range(a, 0, math.inf, f"sweep.dir_alpha[{i}]", errors, low_open=True)
    for i, dm in enumerate(sweep.delta_max):
        _in_range(dm, 0, math.inf, f"sweep.delta_max[{i}]", errors)

    for i, name in enumerate(cfg.overlays):
        _choice(name, OVERLAYS, f"overlays[{i}]", errors)
    if any(o.startswith("cvx") for o in cfg.overlays) and cfg.model.kind == "logistic" and cfg.model.l2_reg <= 0:
        errors.append("overlays: convex bounds need model.l2_reg > 0")
    if cfg.overlays and not cfg.estimate.enabled:
        errors.append("estimate.enabled: bound overlays need constant estimation")

    _in_range(cfg.estimate.resamples, 1, math.inf, "estimate.resamples", errors)
    _in_range(cfg.estimate.probe_rounds, 10, math.inf, "estimate.probe_rounds", errors)
    _in_range(cfg.estimate.pilot_rounds, 0, math.inf, "estimate.pilot_rounds", errors)
    for i, n in enumerate(cfg.privacy.clients):
        _in_range(n, 2, math.inf, f"privacy.clients[{i}]", errors)
    _in_range(cfg.privacy.redraws, 2, math.inf, "privacy.redraws", errors)
    _in_range(cfg.privacy.C_g, 0, math.inf, "privacy.C_g", errors)
    _in_range(cfg.privacy.noisy_sigma_z_sq, 0, math.inf, "privacy.noisy_sigma_z_sq", errors, low_open=True)
    _in_range(cfg.tail.trials, 1, math.inf, "tail.trials", errors)
    _in_range(cfg.tail.clients, 1, math.inf, "tail.clients", errors)
    return errors


def parse_config_dict(payload: Any) -> ExperimentConfig:
    errors: list[str] = []
    cfg = _build(ExperimentConfig, payload, "", errors)
    if not errors:
        errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read, decode and validate an experiment file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    try:
        payload = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    return parse_config_dict(payload)
