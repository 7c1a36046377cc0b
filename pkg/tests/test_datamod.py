import numpy as np
import pytest

from engine.datamod import (
    ClientShard,
    CsvFormatError,
    CsvSchema,
    Dataset,
    DatasetError,
    QuadraticProblem,
    SchemaError,
    apply_class_flip_attack,
    corrupt_shards,
    gen_quadratic_problem,
    gen_synthetic_classification,
    label_entropy,
    load_csv_dataset,
    malicious_clients,
    partition_dirichlet,
    train_test_split_dataset,
    write_csv_dataset,
)
from engine.rngchan import Purpose, stream_for


def _partition(dataset, N, alpha, M, seed=0):
    return partition_dirichlet(dataset, N, alpha, M, stream_for(seed, 0, 0, Purpose.DATA, index=1))


def test_synthetic_classification_is_balanced_and_deterministic():
    a = gen_synthetic_classification(seed=4, d=6, K=3, M_total=301, separation=3.0)
    b = gen_synthetic_classification(seed=4, d=6, K=3, M_total=301, separation=3.0)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.size == 301
    assert sorted(np.bincount(a.labels).tolist()) == [100, 100, 101]


def test_synthetic_class_means_sit_near_their_centers():
    data = gen_synthetic_classification(seed=0, d=4, K=2, M_total=4000, separation=4.0)
    means = np.array([data.features[data.labels == c].mean(axis=0) for c in range(2)])
    assert np.linalg.norm(means[0] - means[1]) == pytest.approx(4.0, rel=0.05)


def test_synthetic_generator_rejects_single_class():
    with pytest.raises(DatasetError):
        gen_synthetic_classification(seed=0, d=3, K=1, M_total=10, separation=1.0)


def test_partition_gives_disjoint_shards_of_exact_size(blobs):
    shards = _partition(blobs, N=8, alpha=0.1, M=50)
    assert all(s.M == 50 for s in shards)
    joined = np.concatenate([s.indices for s in shards])
    assert np.unique(joined).size == joined.size
    assert joined.max() < blobs.size


def test_partition_is_a_pure_function_of_its_stream(blobs):
    a = _partition(blobs, N=5, alpha=0.5, M=30, seed=9)
    b = _partition(blobs, N=5, alpha=0.5, M=30, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.indices, y.indices)


def test_small_alpha_concentrates_labels(blobs):
    skewed = _partition(blobs, N=10, alpha=0.05, M=40)
    uniform = _partition(blobs, N=10, alpha=100.0, M=40)
    skewed_entropy = np.mean([label_entropy(s, blobs) for s in skewed])
    uniform_entropy = np.mean([label_entropy(s, blobs) for s in uniform])
    assert skewed_entropy < uniform_entropy
    assert uniform_entropy == pytest.approx(np.log(3), rel=0.1)


def test_exhausted_classes_are_substituted(blobs):
    shards = _partition(blobs, N=15, alpha=0.05, M=40)
    assert all(s.M == 40 for s in shards)
    assert all("substituted" in s.metadata for s in shards)
    assert sum(sum(s.metadata["requested_counts"]) for s in shards) == 15 * 40


def test_partition_rejects_oversized_request(blobs):
    with pytest.raises(DatasetError):
        _partition(blobs, N=100, alpha=1.0, M=100)


def test_partition_rejects_non_positive_alpha(blobs):
    with pytest.raises(DatasetError):
        _partition(blobs, N=2, alpha=0.0, M=10)


def test_stratified_split_keeps_class_shares(blobs):
    train, test = train_test_split_dataset(blobs, 0.25, seed=0)
    assert train.size + test.size == blobs.size
    assert test.size == pytest.approx(0.25 * blobs.size, abs=1)
    np.testing.assert_allclose(np.bincount(test.labels) / test.size, 1 / 3, atol=0.02)


def test_quadratic_problem_spectrum_and_targets():
    problem = gen_quadratic_problem(seed=0, d=5, N=4, lam=0.5, L=3.0, heterogeneity=1.0, M=6, sample_spread=2.0)
    lo, hi = problem.eigen_range()
    assert lo == pytest.approx(0.5)
    assert hi == pytest.approx(3.0)
    per_client = problem.sample_targets.reshape(4, 6, 5).mean(axis=1)
    np.testing.assert_allclose(per_client, problem.linear_terms, atol=1e-12)
    np.testing.assert_array_equal(problem.client_indices(2), np.arange(12, 18))
    assert [s.M for s in problem.shards()] == [6] * 4


def test_zero_heterogeneity_gives_identical_clients():
    problem = gen_quadratic_problem(seed=1, d=3, N=5, lam=1.0, L=2.0, heterogeneity=0.0)
    np.testing.assert_allclose(problem.linear_terms, problem.linear_terms[0][None].repeat(5, axis=0))


def test_quadratic_problem_rejects_indefinite_hessian():
    with pytest.raises(DatasetError):
        QuadraticProblem(hessians=np.array([[[1.0, 0.0], [0.0, -1.0]]]), linear_terms=np.zeros((1, 2)))


def test_quadratic_generator_rejects_bad_spectrum():
    with pytest.raises(DatasetError):
        gen_quadratic_problem(seed=0, d=2, N=2, lam=2.0, L=1.0, heterogeneity=0.0)


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(DatasetError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)


def test_shard_label_override_must_align():
    with pytest.raises(DatasetError):
        ClientShard(0, np.arange(3), labels=np.zeros(2))


@pytest.mark.parametrize("N,rho,expected", [(10, 0.3, 3), (10, 0.0, 0), (7, 0.5, 4), (5, 1.0, 5)])
def test_malicious_client_count(N, rho, expected):
    assert malicious_clients(N, rho) == list(range(expected))


def test_class_flip_mirrors_labels(blobs, blob_shards):
    flipped = apply_class_flip_attack(blob_shards[0], blobs, 3)
    np.testing.assert_array_equal(flipped, 2 - blobs.labels[blob_shards[0].indices])


def test_corrupt_shards_touches_only_malicious_clients(blobs, blob_shards):
    out = corrupt_shards(blob_shards, blobs, "class_flip", 0.5, 0.0, master_seed=0)
    assert all(s.labels is not None for s in out[:3])
    assert all(s.labels is None for s in out[3:])


def test_noisy_label_attack_is_seeded_and_bounded(blobs, blob_shards):
    a = corrupt_shards(blob_shards, blobs, "noisy_label", 0.5, 0.8, master_seed=2)
    b = corrupt_shards(blob_shards, blobs, "noisy_label", 0.5, 0.8, master_seed=2)
    for x, y in zip(a[:3], b[:3]):
        np.testing.assert_array_equal(x.labels, y.labels)
        assert 0.0 <= x.metadata["noise_rate"] <= 0.8
        changed = np.mean(x.labels != blobs.labels[x.indices])
        assert changed <= x.metadata["noise_rate"] + 1.0 / x.M


def test_unknown_attack_is_rejected(blobs, blob_shards):
    with pytest.raises(DatasetError):
        corrupt_shards(blob_shards, blobs, "poison", 0.5, 0.0, master_seed=0)


def test_csv_round_trip_preserves_rows(tmp_path, blobs):
    path = write_csv_dataset(blobs.subset(np.arange(20)), tmp_path / "data.csv")
    loaded = load_csv_dataset(path, CsvSchema(num_classes=3))
    np.testing.assert_allclose(loaded.features, blobs.features[:20])
    np.testing.assert_array_equal(loaded.labels, blobs.labels[:20])


def test_csv_non_numeric_cell_reports_its_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,x1,label\n1.0,2.0,0\n3.0,oops,1\n")
    with pytest.raises(CsvFormatError) as info:
        load_csv_dataset(path, CsvSchema(num_classes=2))
    assert info.value.line == 3


def test_csv_label_out_of_range_is_a_schema_error(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("x0,label\n1.0,0\n2.0,5\n")
    with pytest.raises(SchemaError, match="line 3"):
        load_csv_dataset(path, CsvSchema(num_classes=2))


def test_csv_missing_label_column(tmp_path):
    path = tmp_path / "cols.csv"
    path.write_text("x0,x1\n1.0,0\n")
    with pytest.raises(SchemaError):
        load_csv_dataset(path, CsvSchema(num_classes=2, label_column="y"))


def test_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv_dataset(tmp_path / "absent.csv", CsvSchema(num_classes=2))


def test_label_entropy_rises_with_concentration():
    data = gen_synthetic_classification(seed=2, d=2, K=10, M_total=20000, separation=3.0)
    entropies = [
        np.mean([label_entropy(s, data) for s in _partition(data, N=50, alpha=alpha, M=100)])
        for alpha in (0.1, 1.0, 10.0, 1e6)
    ]
    assert all(a < b for a, b in zip(entropies, entropies[1:]))


def test_csv_line_numbers_count_blank_lines(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("x0,x1,label\n1,2,0\n\n3,abc,1\n")
    with pytest.raises(CsvFormatError) as info:
        load_csv_dataset(path, CsvSchema(num_classes=2))
    assert info.value.line == 4


def test_csv_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("x0,label\n1.0,0\n\n\n2.0,1\n")
    loaded = load_csv_dataset(path, CsvSchema(num_classes=2))
    np.testing.assert_array_equal(loaded.labels, [0, 1])


def test_csv_empty_file_is_a_format_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DatasetError) as info:
        load_csv_dataset(path, CsvSchema(num_classes=2))
    assert isinstance(info.value, CsvFormatError)
    assert info.value.line == 1
