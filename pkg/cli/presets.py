"""Ready-made experiment files: the default system configuration and one preset per study."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from config.sim_config import SYSTEM_DEFAULTS
from engine.utils.filesystem import atomic_write_text


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


BASELINE = {
    "name": "baseline",
    "study": "training",
    "master_seed": 0,
    "rounds": SYSTEM_DEFAULTS["hardening_rounds"],
    "model": {"kind": "logistic", "l2_reg": 0.01},
    "data": {
        "source": "synthetic",
        "num_classes": 10,
        "feature_dim": 20,
        "separation": 3.0,
        "clients": SYSTEM_DEFAULTS["clients"],
        "samples_per_client": 100,
        "dir_alpha": SYSTEM_DEFAULTS["dir_alpha"],
        "test_fraction": 0.2,
    },
    "channel": {"family": "rayleigh"},
    "noise": {"sigma_z_sq": 0.0},
    "scheme": {"variant": "blind", "survival": SYSTEM_DEFAULTS["survival"]},
    "local": {"B": SYSTEM_DEFAULTS["batch_size"]},
    "schedule": {"kind": "fixed_blind", "eta_0": SYSTEM_DEFAULTS["learning_rate"]},
}

_QUADRATIC = {
    "model": {"kind": "quadratic"},
    "data": {
        "source": "quadratic",
        "dim": 5,
        "lam": 1.0,
        "L": 4.0,
        "heterogeneity": 0.5,
        "sample_spread": 0.5,
        "samples_per_client": 20,
        "test_fraction": 0.0,
    },
}

_OVERRIDES: dict[str, tuple[str, dict]] = {
    "baseline": ("Default system configuration (N=100, B=50, eta=0.03, Dir=0.1)", {}),
    "hardening": (
        "Mean aggregation discrepancy vs N under Rayleigh fading",
        {
            "data": {"samples_per_client": 50, "test_fraction": 0.0},
            "local": {"B": 25},
            "sweep": {"clients": [10, 20, 50, 100, 200], "seeds": [0, 1, 2]},
            "output": {"emit_svg": True},
        },
    ),
    "hardening_nakagami": (
        "Channel hardening under Nakagami-2 fading",
        {
            "data": {"samples_per_client": 50, "test_fraction": 0.0},
            "local": {"B": 25},
            "channel": {"family": "nakagami", "shape": 2.0},
            "sweep": {"clients": [10, 20, 50, 100, 200]},
        },
    ),
    "privacy": (
        "Leakage bound vs N from probed per-entry variances",
        _merge(
            _QUADRATIC,
            {
                "study": "privacy",
                "data": {"dim": 8, "heterogeneity": 0.0, "sample_spread": 1.0},
                "local": {"B": 5, "E": 1},
                "privacy": {"clients": [2, 5, 10, 20, 50, 100, 200, 500], "redraws": 100},
                "output": {"emit_svg": True},
            },
        ),
    ),
    "convex_fixed_rate": (
        "Strongly convex quadratic, fixed learning rate, distance-to-optimum bound",
        _merge(
            _QUADRATIC,
            {
                "rounds": 300,
                "noise": {"sigma_z_sq": 1.0},
                "local": {"B": 5, "E": 3},
                "schedule": {"kind": "fixed_blind", "eta_0": 0.05},
                "sweep": {"clients": [10, 50], "seeds": list(range(20))},
                "overlays": ["cvx_fixed"],
                "estimate": {"enabled": True, "resamples": 50},
            },
        ),
    ),
    "convex_decay_rate": (
        "Isotropic quadratic, decaying learning rate, kappa/(1+t) bound",
        _merge(
            _QUADRATIC,
            {
                "rounds": 300,
                "data": {"dim": 3, "lam": 1.0, "L": 1.0, "heterogeneity": 0.0, "sample_spread": 0.0,
                         "samples_per_client": 10, "clients": 50},
                "local": {"B": 10, "E": 1},
                "schedule": {"kind": "decay_blind", "eta_0": 1.5, "check_eta_0": False},
                "sweep": {"seeds": list(range(20))},
                "overlays": ["cvx_decay"],
                "estimate": {"enabled": True, "resamples": 20},
            },
        ),
    ),
    "fedsgd_floor": (
        "One full-batch step per round: noise floor vs N",
        _merge(
            _QUADRATIC,
            {
                "rounds": 500,
                "data": {"heterogeneity": 0.0, "sample_spread": 0.0, "samples_per_client": 10},
                "noise": {"sigma_z_sq": 1.0},
                "local": {"B": 10, "E": 1},
                "schedule": {"kind": "fixed_blind", "eta_0": 0.2},
                "sweep": {"clients": [20, 40], "seeds": list(range(8))},
            },
        ),
    ),
    "nonconvex": (
        "Logistic model with eta_l = 1/L against the time-averaged gradient bound",
        {
            "model": {"l2_reg": 0.0},
            "data": {"samples_per_client": 50, "test_fraction": 0.0},
            "local": {"B": 25},
            "schedule": {"kind": "fixed_blind", "eta_0": None, "eta_over_L": 1.0},
            "sweep": {"clients": [20, 100], "seeds": [0, 1, 2, 3, 4]},
            "overlays": ["noncvx_fixed"],
            "estimate": {"enabled": True, "resamples": 20},
        },
    ),
    "power_control": (
        "Blind transmission vs truncated channel inversion",
        {
            "model": {"l2_reg": 0.0},
            "data": {"samples_per_client": 50, "test_fraction": 0.0},
            "local": {"B": 25},
            "schedule": {"kind": "fixed_inversion", "eta_0": None, "eta_over_L": 1.0},
            "sweep": {
                "clients": [10, 100],
                "seeds": [0, 1, 2, 3, 4],
                "schemes": ["blind", "truncated_inversion"],
                "delta_max": [0.0, 0.1],
            },
            "overlays": ["power_control"],
            "estimate": {"enabled": True, "resamples": 20},
        },
    ),
    "hardening_tail": (
        "Monte-Carlo frequency of the hardening deviation event vs its tail bound",
        {"study": "tail", "tail": {"nu": [0.5, 1.0, 1.5], "eps": [0.5, 1.0, 2.0], "clients": 20}},
    ),
    "attack_flip": (
        "Class-flip attack on 30% of clients",
        {
            "data": {"separation": 6.0, "dir_alpha": 1.0},
            "attack": {"kind": "class_flip", "rho": 0.3},
            "sweep": {"clients": [20, 100], "seeds": [0, 1, 2, 3, 4]},
        },
    ),
    "attack_noisy": (
        "Noisy-label attack on 30% of clients",
        {
            "attack": {"kind": "noisy_label", "rho": 0.3},
            "sweep": {"clients": [20, 100], "noise_levels": [0.2, 0.5, 0.8]},
        },
    ),
    "heterogeneity": (
        "Measured heterogeneity constant across Dirichlet concentrations",
        {
            "rounds": 50,
            "data": {"clients": 20, "samples_per_client": 50, "test_fraction": 0.0},
            "local": {"B": 25},
            "sweep": {"dir_alpha": [0.05, 0.1, 1.0, 10.0]},
            "estimate": {"enabled": True, "resamples": 20},
        },
    ),
}


def preset_names() -> list[str]:
    return list(_OVERRIDES)


def describe(name: str) -> str:
    return _OVERRIDES[name][0]


def preset(name: str) -> dict:
    """Experiment payload for ``name``."""
    if name not in _OVERRIDES:
        raise KeyError(f"unknown preset '{name}'; available: {', '.join(_OVERRIDES)}")
    payload = _merge(BASELINE, _OVERRIDES[name][1])
    payload["name"] = name
    return payload


def write_presets(directory: str | Path, names: list[str] | None = None) -> list[Path]:
    directory = Path(directory)
    written = []
    for name in names or preset_names():
        text = json.dumps(preset(name), indent=2) + "\n"
        written.append(atomic_write_text(directory / f"{name}.json", text))
    return written
