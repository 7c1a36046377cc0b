import math

import numpy as np
import pytest
from scipy import stats

from engine.rngchan import (
    RAYLEIGH_UNIT_MEAN_SCALE,
    ChannelFamily,
    ChannelModel,
    ChannelModelError,
    NoiseSpec,
    Purpose,
    StreamKey,
    cutoff_for_survival,
    derive_stream,
    fading_moments,
    fading_survival,
    sample_awgn,
    sample_fading,
    stream_for,
    tail_prob_beta,
)


def test_equal_keys_give_identical_sequences():
    a = stream_for(7, 3, 2, Purpose.FADING).random(16)
    b = derive_stream(StreamKey(7, 3, 2, Purpose.FADING)).random(16)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [
        StreamKey(7, 4, 2, Purpose.FADING),
        StreamKey(7, 3, 5, Purpose.FADING),
        StreamKey(7, 3, 2, Purpose.NOISE),
        StreamKey(7, 3, 2, Purpose.FADING, index=1),
        StreamKey(8, 3, 2, Purpose.FADING),
    ],
)
def test_any_key_field_changes_the_stream(other):
    base = stream_for(7, 3, 2, Purpose.FADING).random(8)
    assert not np.array_equal(base, derive_stream(other).random(8))


def test_stream_is_independent_of_consumption_order():
    first = [stream_for(0, 0, c, Purpose.SHUFFLE).integers(0, 1000, 5) for c in range(4)]
    second = [stream_for(0, 0, c, Purpose.SHUFFLE).integers(0, 1000, 5) for c in reversed(range(4))][::-1]
    for x, y in zip(first, second):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("field", ["round", "client", "index"])
def test_negative_key_fields_are_rejected(field):
    kwargs = {"master_seed": 0, "round": 0, "client": 0, "purpose": Purpose.DATA, "index": 0}
    kwargs[field] = -1
    with pytest.raises(ValueError):
        StreamKey(**kwargs)


def test_seed_outside_64_bits_is_rejected():
    with pytest.raises(ValueError):
        StreamKey(2**64, 0, 0, Purpose.DATA)


def test_unit_mean_rayleigh_moments():
    mu, var = fading_moments(ChannelModel.rayleigh())
    assert mu == pytest.approx(1.0)
    assert var == pytest.approx(4.0 / math.pi - 1.0)


def test_nakagami_default_spread_gives_unit_mean():
    model = ChannelModel.nakagami(shape=2.0)
    mu, var = fading_moments(model)
    assert mu == pytest.approx(1.0)
    assert var > 0
    assert model.distribution().mean() == pytest.approx(1.0)


def test_degenerate_channel_is_a_point_mass():
    model = ChannelModel.degenerate(2.5)
    draws = sample_fading(model, stream_for(0, 0, 0, Purpose.FADING), 10)
    np.testing.assert_array_equal(draws, np.full(10, 2.5))
    assert fading_moments(model) == (2.5, 0.0)
    assert tail_prob_beta(model, 0.1) == 0.0


@pytest.mark.parametrize("model", [ChannelModel.rayleigh(), ChannelModel.nakagami(3.0)])
def test_sampled_gains_match_closed_form_moments(model):
    draws = sample_fading(model, stream_for(11, 0, 0, Purpose.FADING), 200_000)
    mu, var = fading_moments(model)
    assert np.all(draws > 0)
    assert draws.mean() == pytest.approx(mu, rel=0.01)
    assert draws.var() == pytest.approx(var, rel=0.03)


@pytest.mark.parametrize("model", [ChannelModel.rayleigh(), ChannelModel.nakagami(2.0)])
@pytest.mark.parametrize("nu", [0.3, 0.8, 1.5])
def test_tail_probability_matches_empirical_frequency(model, nu):
    draws = sample_fading(model, stream_for(5, 0, 0, Purpose.FADING), 200_000)
    mu, _ = fading_moments(model)
    empirical = np.mean(np.abs(draws - mu) > nu)
    assert tail_prob_beta(model, nu) == pytest.approx(empirical, abs=0.005)


def test_tail_probability_is_monotone_in_nu():
    model = ChannelModel.rayleigh()
    betas = [tail_prob_beta(model, nu) for nu in (0.1, 0.5, 1.0, 2.0, 4.0)]
    assert all(a >= b for a, b in zip(betas, betas[1:]))


def test_tail_probability_requires_positive_nu():
    with pytest.raises(ValueError):
        tail_prob_beta(ChannelModel.rayleigh(), 0.0)


@pytest.mark.parametrize("model", [ChannelModel.rayleigh(), ChannelModel.nakagami(2.0)])
def test_cutoff_inverts_survival(model):
    c_th = cutoff_for_survival(model, 0.99)
    assert c_th > 0
    assert fading_survival(model, c_th) == pytest.approx(0.99)


def test_degenerate_cutoff_lets_every_client_through():
    model = ChannelModel.degenerate(1.0)
    c_th = cutoff_for_survival(model, 0.9)
    assert c_th < 1.0
    assert fading_survival(model, c_th) == 1.0


@pytest.mark.parametrize("survival", [0.0, 1.0, 1.2])
def test_cutoff_rejects_survival_outside_open_interval(survival):
    with pytest.raises(ValueError):
        cutoff_for_survival(ChannelModel.rayleigh(), survival)


@pytest.mark.parametrize(
    "build",
    [
        lambda: ChannelModel.degenerate(0.0),
        lambda: ChannelModel.rayleigh(-1.0),
        lambda: ChannelModel.nakagami(0.0),
        lambda: ChannelModel.nakagami(2.0, spread=-1.0),
    ],
)
def test_invalid_channel_parameters_are_rejected(build):
    with pytest.raises(ChannelModelError):
        build()


def test_from_mapping_uses_unit_mean_defaults():
    assert ChannelModel.from_mapping({}).family is ChannelFamily.RAYLEIGH
    assert ChannelModel.from_mapping({}).scale == pytest.approx(RAYLEIGH_UNIT_MEAN_SCALE)
    naka = ChannelModel.from_mapping({"family": "nakagami", "shape": 4.0})
    assert fading_moments(naka)[0] == pytest.approx(1.0)
    assert ChannelModel.from_mapping({"family": "degenerate", "value": 2.0}).value == 2.0


def test_zero_noise_is_exactly_zero():
    xi = sample_awgn(NoiseSpec(0.0, 5), stream_for(0, 0, 0, Purpose.NOISE))
    np.testing.assert_array_equal(xi, np.zeros(5))


def test_noise_variance_matches_spec():
    xi = sample_awgn(NoiseSpec(4.0, 100_000), stream_for(0, 0, 0, Purpose.NOISE))
    assert xi.var() == pytest.approx(4.0, rel=0.02)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0, 3)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, 0)


def test_sample_count_must_be_positive():
    with pytest.raises(ValueError):
        sample_fading(ChannelModel.rayleigh(), stream_for(0, 0, 0, Purpose.FADING), 0)


def test_streams_for_different_purposes_are_uncorrelated():
    a = stream_for(3, 5, 7, Purpose.FADING).random(10_000)
    b = stream_for(3, 5, 7, Purpose.NOISE).random(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_nakagami_with_unit_shape_is_rayleigh():
    nakagami, rayleigh = ChannelModel.nakagami(shape=1.0), ChannelModel.rayleigh()
    assert fading_moments(nakagami) == pytest.approx(fading_moments(rayleigh), rel=1e-12)
    x = sample_fading(nakagami, stream_for(0, 0, 0, Purpose.FADING), 20_000)
    y = sample_fading(rayleigh, stream_for(0, 0, 1, Purpose.FADING), 20_000)
    assert stats.ks_2samp(x, y).pvalue > 1e-3
