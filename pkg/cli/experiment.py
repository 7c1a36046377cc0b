"""Sweep orchestration: one training run per grid cell, plus the privacy and tail studies."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cli.charts import ChartSpec, emit_svg
from config.experiment_config import ExperimentConfig
from config.sim_config import Version
from engine.bounds import (
    BoundError,
    MiBoundInputs,
    csi_error_variance,
    cvx_decay_lr_bound,
    cvx_fixed_lr_bound,
    mi_bound_general,
    mi_bound_iid_noiseless,
    mi_bound_large_n,
    mi_bound_max_over_clients,
    noncvx_decay_lr_bound,
    noncvx_fixed_lr_bound,
    power_control_bound,
)
from engine.datamod import (
    ClientShard,
    CsvSchema,
    Dataset,
    TrainingData,
    corrupt_shards,
    gen_quadratic_problem,
    gen_synthetic_classification,
    load_csv_dataset,
    partition_dirichlet,
    train_test_split_dataset,
)
from engine.fedcore import (
    AggregationScheme,
    LocalConfig,
    LrSchedule,
    RoundRecord,
    SchemeVariant,
    TrainingSetup,
    TrimPolicy,
    pooled_samples,
    run_training,
)
from engine.metrics import (
    ConstantEstimates,
    convergence_inputs_from_estimates,
    entry_variance_probe,
    estimate_constants,
    fit_loglog_slope,
    hardening_tail_frequency,
    min_grad_norm_sq,
    running_R,
    write_constants_file,
)
from engine.models import ModelKind, ModelSpec, constants, local_minimize, loss
from engine.rngchan import (
    SERVER_CLIENT,
    ChannelModel,
    Purpose,
    cutoff_for_survival,
    fading_moments,
    fading_survival,
    stream_for,
)
from engine.utils.dataset_utils import file_metadata, load_dataframe, resolve_dataset_path
from engine.utils.filesystem import atomic_write_text, ensure_dir, resolve_inside, sha256_file
from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CellSpec:
    index: int
    N: int
    seed: int
    scheme: str
    rho: float
    noise_level: float
    dir_alpha: float
    delta_max: float

    @property
    def cell_id(self) -> str:
        return (
            f"cell{self.index:03d}-N{self.N}-s{self.seed}-{self.scheme}"
            f"-rho{self.rho:g}-nl{self.noise_level:g}-a{self.dir_alpha:g}-dm{self.delta_max:g}"
        )


@dataclass
class RunOutput:
    run_dir: Path
    cell_csvs: dict[str, Path] = field(default_factory=dict)
    constants_files: dict[str, Path] = field(default_factory=dict)
    svgs: list[Path] = field(default_factory=list)
    summary_path: Path | None = None
    manifest_path: Path | None = None
    failures: dict[str, str] = field(default_factory=dict)
    summary: pd.DataFrame | None = None

    @property
    def ok(self) -> bool:
        return not self.failures


##########################
# Building blocks        #
##########################


def expand_cells(cfg: ExperimentConfig) -> list[CellSpec]:
    """Cartesian product of the sweep axes; an empty axis falls back to the base value."""
    sweep = cfg.sweep
    axes = [
        sweep.clients or [cfg.data.clients],
        sweep.seeds or [cfg.master_seed],
        sweep.schemes or [cfg.scheme.variant],
        sweep.rho or [cfg.attack.rho],
        sweep.noise_levels or [cfg.attack.noise_level],
        sweep.dir_alpha or [cfg.data.dir_alpha],
        sweep.delta_max or [cfg.scheme.delta_max],
    ]
    return [CellSpec(i, *values) for i, values in enumerate(itertools.product(*axes))]


def model_spec_for(cfg: ExperimentConfig, data: TrainingData) -> ModelSpec:
    if cfg.model.kind == "quadratic":
        return ModelSpec.quadratic(data.dim)
    return ModelSpec.logistic(data.feature_dim, data.num_classes, cfg.model.l2_reg)


def build_population(
    cfg: ExperimentConfig, seed: int, max_clients: int, dir_alpha: float
) -> tuple[TrainingData, Dataset | None, list[ClientShard]]:
    """Data, optional held-out set and ``max_clients`` shards; smaller N uses the first N shards."""
    spec = cfg.data
    M = spec.samples_per_client
    if spec.source == "quadratic":
        problem = gen_quadratic_problem(
            seed, spec.dim, max_clients, spec.lam, spec.L, spec.heterogeneity, M, spec.sample_spread
        )
        return problem, None, problem.shards()

    if spec.source == "csv":
        dataset = load_csv_dataset(spec.path, CsvSchema(num_classes=spec.num_classes))
    else:
        pool = spec.samples or 2 * max_clients * M
        total = int(math.ceil(pool / (1.0 - spec.test_fraction)))
        dataset = gen_synthetic_classification(seed, spec.feature_dim, spec.num_classes, total, spec.separation)
    test_set = None
    if spec.test_fraction > 0:
        dataset, test_set = train_test_split_dataset(dataset, spec.test_fraction, seed)
    shards = partition_dirichlet(
        dataset, max_clients, dir_alpha, M, stream_for(seed, 0, SERVER_CLIENT, Purpose.DATA, index=1)
    )
    return dataset, test_set, shards


def resolve_scheme(cfg: ExperimentConfig, variant: str, delta_max: float, channel: ChannelModel) -> AggregationScheme:
    if variant != SchemeVariant.TRUNCATED_INVERSION.value:
        return AggregationScheme(SchemeVariant(variant))
    c_th = cfg.scheme.c_th
    if c_th is None:
        c_th = cutoff_for_survival(channel, cfg.scheme.survival)
    return AggregationScheme(SchemeVariant.TRUNCATED_INVERSION, c_th, cfg.scheme.gamma_t, delta_max)


def _probe_weights(w0: np.ndarray, records: list[RoundRecord], count: int) -> list[np.ndarray]:
    if not records:
        return [w0]
    picks = np.unique(np.linspace(0, len(records) - 1, num=min(count, len(records))).astype(int))
    return [records[i].w_t for i in picks]


def _overlay_column(
    name: str, estimates: ConstantEstimates, rounds: int, scheme: AggregationScheme, check_eta_0: bool = True
) -> list[float]:
    inputs = convergence_inputs_from_estimates(estimates)
    if name == "power_control" and scheme.variant is not SchemeVariant.TRUNCATED_INVERSION:
        return [math.nan] * rounds
    evaluators = {
        "cvx_fixed": lambda t: cvx_fixed_lr_bound(inputs, t),
        "cvx_decay": lambda t: cvx_decay_lr_bound(inputs, t, strict=check_eta_0),
        "noncvx_fixed": lambda t: noncvx_fixed_lr_bound(inputs, t + 1),
        "noncvx_decay": lambda t: noncvx_decay_lr_bound(inputs, t + 1) if t >= 1 else math.nan,
        "power_control": lambda t: power_control_bound(inputs, t + 1),
    }
    return [evaluators[name](t) for t in range(rounds)]


##########################
# One sweep cell         #
##########################


def run_cell(
    cfg: ExperimentConfig,
    cell: CellSpec,
    population: tuple[TrainingData, Dataset | None, list[ClientShard]],
) -> tuple[pd.DataFrame, dict, ConstantEstimates | None]:
    data, test_set, all_shards = population
    if cell.N > len(all_shards):
        raise ValueError(f"cell asks for {cell.N} clients but only {len(all_shards)} shards exist")
    shards = corrupt_shards(
        all_shards[: cell.N], data, cfg.attack.kind, cell.rho, cell.noise_level, cell.seed
    )
    spec = model_spec_for(cfg, data)
    indices, labels = pooled_samples(data, shards)
    L = constants(spec, data, indices).L

    channel = ChannelModel.from_mapping(asdict(cfg.channel))
    mu_c, _ = fading_moments(channel)
    scheme = resolve_scheme(cfg, cell.scheme, cell.delta_max, channel)
    eta_0 = cfg.schedule.eta_0 if cfg.schedule.eta_0 is not None else cfg.schedule.eta_over_L / L
    schedule = LrSchedule(cfg.schedule.kind, eta_0, mu_c)
    E, B = cfg.local_steps, cfg.local.B
    trim_policy = TrimPolicy(cfg.trim.mode, cfg.trim.budget)

    w0 = np.zeros(spec.dim)
    w_star, f_star = None, 0.0  # cross-entropy is non-negative, so 0 lower-bounds f*
    if spec.strongly_convex:
        w_star, f_star = local_minimize(spec, data, indices, labels)

    setup = TrainingSetup(
        spec=spec,
        data=data,
        shards=shards,
        w0=w0,
        local=LocalConfig(E, B, eta_0),
        schedule=schedule,
        channel=channel,
        sigma_z_sq=cfg.noise.sigma_z_sq,
        rounds=cfg.rounds,
        master_seed=cell.seed,
        scheme=scheme,
        trim_policy=trim_policy,
        workers=cfg.workers,
        w_star=w_star,
        test_set=test_set,
    )
    records = run_training(setup)

    frame = pd.DataFrame(
        {
            "t": [r.t for r in records],
            "loss": [r.loss for r in records],
            "grad_norm_sq": [r.grad_norm_sq for r in records],
            "discrepancy": [r.discrepancy for r in records],
            "participants": [r.num_participants for r in records],
            "eta_t": [r.eta_t for r in records],
        }
    )
    if w_star is not None:
        frame["dist_sq"] = [r.dist_sq for r in records]
    if test_set is not None and spec.kind is ModelKind.LOGISTIC:
        frame["accuracy"] = [r.accuracy for r in records]
    frame["R"] = running_R(records)

    estimates = None
    if cfg.estimate.enabled:
        first_eta_l = schedule.at(0)[1]
        probes = _probe_weights(w0, records, cfg.estimate.pilot_rounds or 1)
        estimates = estimate_constants(
            spec,
            data,
            shards,
            LocalConfig(E, B, first_eta_l),
            probes,
            cell.seed,
            tol=cfg.estimate.tol,
            trim_policy=trim_policy,
            resamples=cfg.estimate.resamples,
            probe_rounds=cfg.estimate.probe_rounds,
        )
        survival = fading_survival(channel, scheme.c_th) if scheme.c_th is not None else None
        estimates.context = {
            "d": spec.dim,
            "N": cell.N,
            "E": E,
            "B": B,
            "eta_l": first_eta_l,
            "eta_0": eta_0,
            "mu_c": mu_c,
            "sigma_z_sq": cfg.noise.sigma_z_sq,
            "init_dist_sq": float(np.sum((w0 - w_star) ** 2)) if w_star is not None else 0.0,
            "init_gap": max(0.0, loss(spec, w0, data, indices, labels) - f_star),
            "S": cell.N * survival if survival is not None else None,
            "gamma_t": scheme.gamma_t,
            "sigma_delta_sq": csi_error_variance(scheme.delta_max),
            "c_th": scheme.c_th,
            "delta_max": scheme.delta_max,
        }
        for name in cfg.overlays:
            try:
                frame[name] = _overlay_column(name, estimates, len(records), scheme, cfg.schedule.check_eta_0)
            except BoundError as exc:
                logger.warning("%s: overlay %s skipped: %s", cell.cell_id, name, exc)
                frame[name] = math.nan

    last = records[-1] if records else None
    row = {
        "cell_id": cell.cell_id,
        "N": cell.N,
        "seed": cell.seed,
        "scheme": cell.scheme,
        "rho": cell.rho,
        "noise_level": cell.noise_level,
        "dir_alpha": cell.dir_alpha,
        "delta_max": cell.delta_max,
        "rounds": len(records),
        "final_loss": last.loss if last else math.nan,
        "final_grad_norm_sq": last.grad_norm_sq if last else math.nan,
        "final_accuracy": last.accuracy if last and last.accuracy is not None else math.nan,
        "final_dist_sq": last.dist_sq if last and last.dist_sq is not None else math.nan,
        "mean_discrepancy": float(frame["discrepancy"].mean()) if records else math.nan,
        "R": float(frame["R"].iloc[-1]) if records else math.nan,
        "min_grad_norm_sq": min_grad_norm_sq(records) if records else math.nan,
        "mean_participants": float(frame["participants"].mean()) if records else math.nan,
        "empty_rounds": sum(r.empty_round for r in records),
        "Gamma_hat": estimates.Gamma_hat if estimates else math.nan,
        "error": "",
    }
    return frame, row, estimates


##########################
# Output helpers         #
##########################


def _write_frame(run_dir: Path, relative: str, frame: pd.DataFrame) -> Path:
    path = resolve_inside(run_dir, relative)
    return atomic_write_text(path, frame.to_csv(index=False))


def _hardening_slope(summary: pd.DataFrame) -> float:
    ok = summary[(summary["error"] == "") & (summary["mean_discrepancy"] > 0)]
    per_n = ok.groupby("N")["mean_discrepancy"].mean()
    if per_n.size < 2:
        return math.nan
    return fit_loglog_slope(per_n.index.to_numpy(dtype=float), per_n.to_numpy())


def _write_manifest(cfg: ExperimentConfig, output: RunOutput, seeds: list[int]) -> Path:
    run_dir = output.run_dir
    files = sorted(
        p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json" and not p.name.startswith(".")
    )
    payload = {
        "version": Version,
        "name": cfg.name,
        "study": cfg.study,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seeds": seeds,
        "files": {str(p.relative_to(run_dir)): sha256_file(p) for p in files},
        "failures": output.failures,
    }
    if cfg.data.source == "csv":
        source = resolve_dataset_path(cfg.data.path)
        frame = load_dataframe(source)
        payload["dataset"] = file_metadata(source, len(frame), len(frame.columns))
        payload["dataset"]["sha256"] = sha256_file(source)
    path = run_dir / "manifest.json"
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _chart(output: RunOutput, csv_path: Path, spec: ChartSpec) -> None:
    try:
        output.svgs.append(emit_svg(csv_path, spec))
    except ValueError as exc:
        logger.warning("chart for %s skipped: %s", csv_path.name, exc)


##########################
# Studies                #
##########################


def run_training_study(cfg: ExperimentConfig, output: RunOutput, only_cell: str | None = None) -> None:
    cells = expand_cells(cfg)
    if only_cell is not None:
        cells = [c for c in cells if c.cell_id == only_cell or str(c.index) == only_cell]
        if not cells:
            raise KeyError(f"no sweep cell matches '{only_cell}'")
    max_clients = max(c.N for c in expand_cells(cfg))
    populations: dict[tuple[int, float], tuple] = {}
    rows = []
    for cell in cells:
        logger.info("running %s", cell.cell_id)
        try:
            key = (cell.seed, cell.dir_alpha)
            if key not in populations:
                populations[key] = build_population(cfg, cell.seed, max_clients, cell.dir_alpha)
            frame, row, estimates = run_cell(cfg, cell, populations[key])
        except Exception as exc:
            message = f"{type(exc).__name__}: {exc}"
            logger.error("%s failed: %s", cell.cell_id, message)
            output.failures[cell.cell_id] = message
            rows.append({"cell_id": cell.cell_id, "N": cell.N, "seed": cell.seed, "scheme": cell.scheme,
                         "rho": cell.rho, "noise_level": cell.noise_level, "dir_alpha": cell.dir_alpha,
                         "delta_max": cell.delta_max, "error": message})
            continue
        csv_path = _write_frame(output.run_dir, f"cells/{cell.cell_id}.csv", frame)
        output.cell_csvs[cell.cell_id] = csv_path
        if estimates is not None:
            const_path = resolve_inside(output.run_dir, f"constants/{cell.cell_id}.json")
            output.constants_files[cell.cell_id] = write_constants_file(estimates, const_path)
        if cfg.output.emit_svg:
            y = ["dist_sq"] if "dist_sq" in frame.columns else ["loss"]
            y += [name for name in cfg.overlays if name.startswith("cvx") and name in frame.columns]
            _chart(output, csv_path, ChartSpec(x="t", y=y, title=cell.cell_id, logy=True))
        rows.append(row)

    if only_cell is not None:
        return
    summary = pd.DataFrame(rows)
    summary["error"] = summary["error"].fillna("")
    summary["hardening_slope"] = _hardening_slope(summary) if "mean_discrepancy" in summary else math.nan
    output.summary = summary
    output.summary_path = _write_frame(output.run_dir, "summary.csv", summary)

    if summary["N"].nunique() > 1 and "mean_discrepancy" in summary:
        hardening = (
            summary[summary["error"] == ""].groupby("N", as_index=False)["mean_discrepancy"].mean()
        )
        hardening_path = _write_frame(output.run_dir, "hardening.csv", hardening)
        if cfg.output.emit_svg:
            _chart(output, hardening_path, ChartSpec(x="N", y=["mean_discrepancy"], logx=True, logy=True,
                                                     title="Aggregation discrepancy vs N"))


def run_privacy_study(cfg: ExperimentConfig, output: RunOutput) -> None:
    """Leakage bounds vs N from one variance probe over the largest population."""
    seed = cfg.master_seed
    max_clients = max(cfg.privacy.clients)
    data, _, shards = build_population(cfg, seed, max_clients, cfg.data.dir_alpha)
    spec = model_spec_for(cfg, data)
    channel = ChannelModel.from_mapping(asdict(cfg.channel))
    indices, _ = pooled_samples(data, shards)
    L = constants(spec, data, indices).L
    eta_0 = cfg.schedule.eta_0 if cfg.schedule.eta_0 is not None else cfg.schedule.eta_over_L / L
    mu_c, _ = fading_moments(channel)
    eta_l = LrSchedule(cfg.schedule.kind, eta_0, mu_c).at(0)[1]
    probe = entry_variance_probe(
        spec,
        data,
        shards,
        np.zeros(spec.dim),
        LocalConfig(cfg.local_steps, cfg.local.B, eta_l),
        channel,
        seed,
        redraws=cfg.privacy.redraws,
        d_star=cfg.privacy.d_star,
    )
    d_star = probe.variances.shape[1]
    C_g = cfg.privacy.C_g
    base_noise, noisy = cfg.noise.sigma_z_sq, cfg.privacy.noisy_sigma_z_sq

    rows = []
    for N in sorted(cfg.privacy.clients):
        measured = probe.variances[:N]
        pooled = np.tile(measured.mean(axis=0), (N, 1))
        rows.append(
            {
                "N": N,
                "mi_measured": mi_bound_general(MiBoundInputs(N, d_star, C_g, base_noise, measured)),
                "mi_measured_noisy": mi_bound_general(MiBoundInputs(N, d_star, C_g, noisy, measured)),
                "mi_worst_client": mi_bound_max_over_clients(MiBoundInputs(N, d_star, C_g, base_noise, measured)),
                "mi_pooled": mi_bound_general(MiBoundInputs(N, d_star, C_g, base_noise, pooled)),
                "mi_pooled_noisy": mi_bound_general(MiBoundInputs(N, d_star, C_g, noisy, pooled)),
                "mi_pooled_large_n": mi_bound_large_n(MiBoundInputs(N, d_star, C_g, base_noise, pooled)),
                "mi_iid_noiseless": mi_bound_iid_noiseless(C_g, d_star, N),
            }
        )
    frame = pd.DataFrame(rows)
    csv_path = _write_frame(output.run_dir, "privacy.csv", frame)
    variances = pd.DataFrame(probe.variances, columns=[f"coord{c}" for c in probe.coordinates])
    _write_frame(output.run_dir, "entry_variances.csv", variances)
    output.summary, output.summary_path = frame, csv_path
    if cfg.output.emit_svg:
        _chart(output, csv_path, ChartSpec(x="N", y=["mi_pooled", "mi_pooled_noisy"], logx=True,
                                           ylabel="leakage bound (nats)", title="Leakage bound vs N"))


def run_tail_study(cfg: ExperimentConfig, output: RunOutput) -> None:
    """Monte-Carlo check of the hardening tail bound on a grid of (nu, eps)."""
    seed = cfg.master_seed
    channel = ChannelModel.from_mapping(asdict(cfg.channel))
    grads = stream_for(seed, 0, SERVER_CLIENT, Purpose.PROBE).standard_normal((cfg.tail.clients, 4))
    rows = []
    for k, (nu, eps) in enumerate(itertools.product(cfg.tail.nu, cfg.tail.eps)):
        stream = stream_for(seed, 0, SERVER_CLIENT, Purpose.PROBE, index=k + 1)
        check = hardening_tail_frequency(grads, channel, nu, eps, cfg.tail.trials, stream)
        rows.append({**asdict(check), "holds": check.frequency <= check.bound})
    frame = pd.DataFrame(rows)
    output.summary = frame
    output.summary_path = _write_frame(output.run_dir, "tail.csv", frame)
    violations = int((~frame["holds"]).sum())
    if violations:
        output.failures["tail"] = f"{violations} grid points exceed their bound"


def run_experiment(cfg: ExperimentConfig, only_cell: str | None = None) -> RunOutput:
    """Run the configured study; cell failures are recorded, never raised."""
    output = RunOutput(run_dir=ensure_dir(cfg.output_dir.resolve()))
    if cfg.study == "training":
        run_training_study(cfg, output, only_cell)
        seeds = sorted({c.seed for c in expand_cells(cfg)})
    else:
        try:
            if cfg.study == "privacy":
                run_privacy_study(cfg, output)
            else:
                run_tail_study(cfg, output)
        except Exception as exc:
            message = f"{type(exc).__name__}: {exc}"
            logger.error("%s study failed: %s", cfg.study, message)
            output.failures[cfg.study] = message
        seeds = [cfg.master_seed]
    if only_cell is None:
        output.manifest_path = _write_manifest(cfg, output, seeds)
    return output
