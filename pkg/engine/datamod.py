"""Datasets, client shards, quadratic fixtures and label attacks."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from scipy import stats
from sklearn.datasets import make_blobs
from sklearn.model_selection import train_test_split

from engine.rngchan import SERVER_CLIENT, Purpose, stream_for
from engine.utils.dataset_utils import load_dataframe, pd, resolve_dataset_path
from engine.utils.filesystem import atomic_write_text
from engine.utils.logging_utils import get_logger

logger = get_logger(__name__)


class DatasetError(ValueError):
    """Raised when a dataset, shard or partition request is invalid."""

    pass


class CsvFormatError(DatasetError):
    """Raised when a CSV row cannot be parsed; ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SchemaError(DatasetError):
    """Raised when CSV contents violate the declared schema."""

    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int = 0  # 0 marks real-valued (regression) labels

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {self.features.shape}")
        if self.features.shape[0] < 1:
            raise DatasetError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features must be finite")
        labels = np.asarray(self.labels)
        if labels.shape != (self.features.shape[0],):
            raise DatasetError(
                f"expected {self.features.shape[0]} labels, got shape {labels.shape}"
            )
        if self.num_classes > 0:
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DatasetError("class labels must be integers")
            labels = labels.astype(np.int64)
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise DatasetError(f"labels must lie in [0, {self.num_classes - 1}]")
        else:
            labels = labels.astype(float)
        self.labels = labels

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> Dataset:
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass
class ClientShard:
    client_id: int
    indices: np.ndarray
    labels: np.ndarray | None = None  # per-position override (corrupted labels)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != self.indices.shape:
                raise DatasetError("shard label override must align with its indices")

    @property
    def M(self) -> int:
        return int(self.indices.size)

    def targets(self, data: TrainingData) -> np.ndarray | None:
        """Labels this client trains on, in index order (None for quadratic problems)."""
        if self.labels is not None:
            return self.labels
        if isinstance(data, Dataset):
            return data.labels[self.indices]
        return None

    def with_labels(self, labels: np.ndarray, **metadata) -> ClientShard:
        return replace(self, labels=np.asarray(labels), metadata={**self.metadata, **metadata})


@dataclass
class QuadraticProblem:
    """Per-client quadratics f_n(w) = 1/2 w^T A_n w - b_n^T w.

    Sample i of client n contributes 1/2 w^T A_n w - b_i^T w, where the
    per-sample targets b_i of a client average exactly to b_n. Samples are
    numbered client-major, so client n owns [n*M, (n+1)*M).
    """

    hessians: np.ndarray
    linear_terms: np.ndarray
    samples_per_client: int = 1
    sample_targets: np.ndarray | None = None

    def __post_init__(self):
        self.hessians = np.asarray(self.hessians, dtype=float)
        self.linear_terms = np.asarray(self.linear_terms, dtype=float)
        if self.hessians.ndim != 3 or self.hessians.shape[1] != self.hessians.shape[2]:
            raise DatasetError(f"hessians must have shape (N, d, d), got {self.hessians.shape}")
        n_clients, d = self.hessians.shape[:2]
        if self.linear_terms.shape != (n_clients, d):
            raise DatasetError(f"linear terms must have shape ({n_clients}, {d})")
        if not np.allclose(self.hessians, np.swapaxes(self.hessians, 1, 2), atol=1e-10):
            raise DatasetError("hessians must be symmetric")
        if np.linalg.eigvalsh(self.hessians).min() <= 0:
            raise DatasetError("hessians must be positive definite")
        if self.samples_per_client < 1:
            raise DatasetError("samples_per_client must be >= 1")
        if self.sample_targets is None:
            self.sample_targets = np.repeat(self.linear_terms, self.samples_per_client, axis=0)
        self.sample_targets = np.asarray(self.sample_targets, dtype=float)
        if self.sample_targets.shape != (n_clients * self.samples_per_client, d):
            raise DatasetError("sample_targets must have shape (N*M, d)")

    @property
    def N(self) -> int:
        return self.hessians.shape[0]

    @property
    def dim(self) -> int:
        return self.hessians.shape[1]

    @property
    def size(self) -> int:
        return self.N * self.samples_per_client

    @property
    def owners(self) -> np.ndarray:
        return np.repeat(np.arange(self.N), self.samples_per_client)

    def client_indices(self, client: int) -> np.ndarray:
        start = client * self.samples_per_client
        return np.arange(start, start + self.samples_per_client)

    def shards(self) -> list[ClientShard]:
        return [ClientShard(n, self.client_indices(n)) for n in range(self.N)]

    def eigen_range(self) -> tuple[float, float]:
        eigs = np.linalg.eigvalsh(self.hessians)
        return float(eigs.min()), float(eigs.max())


TrainingData = Union[Dataset, QuadraticProblem]


##############
# Generators #
##############


def gen_synthetic_classification(
    seed: int, d: int, K: int, M_total: int, separation: float
) -> Dataset:
    """Gaussian clusters (unit spread); class centers sit ``separation`` apart."""
    if K < 2 or d < 1 or M_total < K:
        raise DatasetError("need K >= 2, d >= 1 and M_total >= K")
    if separation < 0:
        raise DatasetError("separation must be >= 0")
    rng = stream_for(seed, 0, SERVER_CLIENT, Purpose.DATA)
    radius = separation / math.sqrt(2.0)
    if K <= d:
        centers = radius * np.eye(K, d)
    else:
        raw = rng.standard_normal((K, d))
        centers = radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    counts = [M_total // K + (1 if c < M_total % K else 0) for c in range(K)]
    features, labels = make_blobs(
        n_samples=counts,
        n_features=d,
        centers=centers,
        cluster_std=1.0,
        shuffle=True,
        random_state=int(rng.integers(2**31 - 1)),
    )
    return Dataset(features, labels, K)


def gen_quadratic_problem(
    seed: int,
    d: int,
    N: int,
    lam: float,
    L: float,
    heterogeneity: float,
    M: int = 1,
    sample_spread: float = 0.0,
) -> QuadraticProblem:
    """Shared Hessian with spectrum spanning [lam, L]; b_n spread scales with ``heterogeneity``."""
    if not 0 < lam <= L:
        raise DatasetError(f"need 0 < lambda <= L, got lambda={lam}, L={L}")
    if heterogeneity < 0 or sample_spread < 0:
        raise DatasetError("heterogeneity and sample_spread must be >= 0")
    if d < 1 or N < 1 or M < 1:
        raise DatasetError("d, N and M must be >= 1")
    rng = stream_for(seed, 0, SERVER_CLIENT, Purpose.DATA)
    if d > 1:
        basis = stats.ortho_group.rvs(d, random_state=rng)
        eigs = np.linspace(lam, L, d)
    else:
        basis = np.ones((1, 1))
        eigs = np.array([lam])
    hessian = (basis * eigs) @ basis.T
    hessian = 0.5 * (hessian + hessian.T)

    center = rng.standard_normal(d)
    directions = rng.standard_normal((N, d))
    linear_terms = center + heterogeneity * directions

    jitter = rng.standard_normal((N, M, d))
    jitter -= jitter.mean(axis=1, keepdims=True)
    targets = (linear_terms[:, None, :] + sample_spread * jitter).reshape(N * M, d)

    return QuadraticProblem(
        hessians=np.repeat(hessian[None], N, axis=0),
        linear_terms=linear_terms,
        samples_per_client=M,
        sample_targets=targets,
    )


def train_test_split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified hold-out split."""
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must lie in (0, 1)")
    idx = np.arange(dataset.size)
    train_idx, test_idx = train_test_split(
        idx,
        test_size=test_fraction,
        random_state=seed % (2**32),
        stratify=dataset.labels if dataset.num_classes > 0 else None,
    )
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


################
# Partitioning #
################


def _largest_remainder(raw: np.ndarray, total: int) -> np.ndarray:
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def partition_dirichlet(
    dataset: Dataset, N: int, dir_alpha: float, M: int, stream: np.random.Generator
) -> list[ClientShard]:
    """Dirichlet label-skew partition into N disjoint shards of exactly M samples.

    Class requests a client cannot get (pool exhausted) are filled from the
    classes it prefers next; the substituted count is kept in shard metadata.
    """
    if dataset.num_classes < 1:
        raise DatasetError("Dirichlet partitioning needs class labels")
    if N < 1 or M < 1:
        raise DatasetError("N and M must be >= 1")
    if N * M > dataset.size:
        raise DatasetError(f"N*M = {N * M} exceeds the {dataset.size} available samples")
    if not dir_alpha > 0:
        raise DatasetError(f"dir_alpha must be positive, got {dir_alpha}")

    K = dataset.num_classes
    pools = [stream.permutation(np.flatnonzero(dataset.labels == c)) for c in range(K)]
    cursor = np.zeros(K, dtype=np.int64)
    proportions = stream.dirichlet(np.full(K, dir_alpha), size=N)

    shards = []
    for n in range(N):
        p = proportions[n]
        if not np.all(np.isfinite(p)) or p.sum() <= 0:
            p = np.eye(K)[int(stream.integers(K))]
        requested = _largest_remainder(p * M, M)
        taken = []
        shortfall = 0
        for c in range(K):
            take = int(min(requested[c], pools[c].size - cursor[c]))
            taken.append(pools[c][cursor[c] : cursor[c] + take])
            cursor[c] += take
            shortfall += int(requested[c]) - take
        substituted = shortfall
        for c in np.argsort(-p, kind="stable"):
            if shortfall == 0:
                break
            take = int(min(shortfall, pools[c].size - cursor[c]))
            taken.append(pools[c][cursor[c] : cursor[c] + take])
            cursor[c] += take
            shortfall -= take
        indices = np.sort(np.concatenate(taken))
        shards.append(
            ClientShard(
                n,
                indices,
                metadata={"requested_counts": requested.tolist(), "substituted": substituted},
            )
        )
    logger.debug("partitioned %d samples into %d shards (alpha=%s)", N * M, N, dir_alpha)
    return shards


def label_entropy(shard: ClientShard, dataset: Dataset) -> float:
    """Entropy (nats) of the shard's class histogram."""
    counts = np.bincount(shard.targets(dataset), minlength=dataset.num_classes)
    return float(stats.entropy(counts))


###########
# Attacks #
###########


def malicious_clients(N: int, rho: float) -> list[int]:
    """The first ceil(rho*N) client indices."""
    if not 0.0 <= rho <= 1.0:
        raise DatasetError(f"rho must lie in [0, 1], got {rho}")
    return list(range(min(N, math.ceil(rho * N - 1e-9))))


def draw_noise_rate(noise_level: float, stream: np.random.Generator) -> float:
    """Per-client label-noise rate, uniform on [0, noise_level]."""
    return float(noise_level * stream.random())


def apply_noisy_label_attack(
    shard: ClientShard, dataset: Dataset, noise_level: float, stream: np.random.Generator
) -> np.ndarray:
    """Replace a uniformly drawn fraction of the shard's labels by uniform random labels."""
    if not 0.0 <= noise_level <= 1.0:
        raise DatasetError(f"noise_level must lie in [0, 1], got {noise_level}")
    labels = np.array(shard.targets(dataset), copy=True)
    rate = draw_noise_rate(noise_level, stream)
    k = int(round(rate * shard.M))
    if k:
        positions = stream.choice(shard.M, size=k, replace=False)
        labels[positions] = stream.integers(0, dataset.num_classes, size=k)
    return labels


def apply_class_flip_attack(shard: ClientShard, dataset: Dataset, K: int) -> np.ndarray:
    """Label i becomes (K-1)-i."""
    if K < 2:
        raise DatasetError("class flip needs K >= 2")
    return (K - 1) - np.asarray(shard.targets(dataset))


def corrupt_shards(
    shards: list[ClientShard],
    dataset: Dataset,
    attack: str,
    rho: float,
    noise_level: float,
    master_seed: int,
) -> list[ClientShard]:
    """Apply ``attack`` ("none", "noisy_label" or "class_flip") to the malicious clients."""
    if attack == "none" or rho == 0:
        return list(shards)
    if attack not in ("noisy_label", "class_flip"):
        raise DatasetError(f"unknown attack '{attack}'")
    bad = set(malicious_clients(len(shards), rho))
    out = []
    for position, shard in enumerate(shards):
        if position not in bad:
            out.append(shard)
            continue
        if attack == "class_flip":
            out.append(shard.with_labels(apply_class_flip_attack(shard, dataset, dataset.num_classes), attack=attack))
            continue
        key = (master_seed, 0, shard.client_id, Purpose.ATTACK)
        labels = apply_noisy_label_attack(shard, dataset, noise_level, stream_for(*key))
        rate = draw_noise_rate(noise_level, stream_for(*key))
        out.append(shard.with_labels(labels, attack=attack, noise_rate=rate))
    logger.info("%s attack applied to %d of %d clients", attack, len(bad), len(shards))
    return out


#################
# CSV ingestion #
#################


@dataclass(frozen=True)
class CsvSchema:
    num_classes: int  # 0 reads real-valued labels
    label_column: str | None = None  # default: last column
    feature_columns: tuple[str, ...] | None = None


def _parse_column(values, lines, column: str) -> np.ndarray:
    out = np.empty(len(values))
    for row, (text, line) in enumerate(zip(values, lines)):
        try:
            number = float(text)
        except (TypeError, ValueError):
            raise CsvFormatError(
                f"non-numeric value {text!r} in column '{column}' at line {line}", line=line
            ) from None
        if not math.isfinite(number):
            raise CsvFormatError(f"non-finite value in column '{column}' at line {line}", line=line)
        out[row] = number
    return out


def load_csv_dataset(path: str | Path, schema: CsvSchema) -> Dataset:
    """Read header + feature columns + label column; row order is preserved."""
    resolved = resolve_dataset_path(path)
    try:
        frame = load_dataframe(resolved)
    except pd.errors.EmptyDataError as exc:
        raise CsvFormatError(f"{path} is empty; expected a header line", line=1) from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) if match else None
        raise CsvFormatError(f"malformed row at line {line}: {exc}", line=line) from exc
    if frame.empty:
        raise DatasetError(f"{path} contains no data rows")

    label_column = schema.label_column or frame.columns[-1]
    if label_column not in frame.columns:
        raise SchemaError(f"label column '{label_column}' missing from {path}")
    feature_columns = list(schema.feature_columns or [c for c in frame.columns if c != label_column])
    missing = [c for c in feature_columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"feature columns missing from {path}: {', '.join(missing)}")

    lines = [int(i) + 2 for i in frame.index]
    features = np.column_stack([_parse_column(frame[c].tolist(), lines, c) for c in feature_columns])
    labels = _parse_column(frame[label_column].tolist(), lines, label_column)
    if schema.num_classes > 0:
        bad = np.flatnonzero((labels != np.round(labels)) | (labels < 0) | (labels >= schema.num_classes))
        if bad.size:
            line = lines[int(bad[0])]
            raise SchemaError(
                f"label {labels[bad[0]]!r} at line {line} is outside [0, {schema.num_classes - 1}]"
            )
    return Dataset(features, labels, schema.num_classes)


def write_csv_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Header x0..x{d-1},label; floats written with round-trip precision."""
    frame = pd.DataFrame(dataset.features, columns=[f"x{j}" for j in range(dataset.feature_dim)])
    frame["label"] = dataset.labels
    return atomic_write_text(Path(path), frame.to_csv(index=False))
