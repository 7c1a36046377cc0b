import numpy as np
import pytest

from engine.datamod import gen_quadratic_problem, gen_synthetic_classification, partition_dirichlet
from engine.models import ModelSpec
from engine.rngchan import SERVER_CLIENT, Purpose, stream_for


@pytest.fixture
def quadratic_problem():
    return gen_quadratic_problem(seed=3, d=4, N=6, lam=1.0, L=4.0, heterogeneity=0.5, M=10, sample_spread=0.5)


@pytest.fixture
def quadratic_spec(quadratic_problem):
    return ModelSpec.quadratic(quadratic_problem.dim)


@pytest.fixture
def blobs():
    return gen_synthetic_classification(seed=1, d=5, K=3, M_total=600, separation=4.0)


@pytest.fixture
def blob_shards(blobs):
    stream = stream_for(1, 0, SERVER_CLIENT, Purpose.DATA, index=1)
    return partition_dirichlet(blobs, N=6, dir_alpha=1.0, M=40, stream=stream)


@pytest.fixture
def logistic_spec(blobs):
    return ModelSpec.logistic(blobs.feature_dim, blobs.num_classes, l2_reg=0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tmp_output(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path
