import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from onebit import orka
from onebit import sensing as se


def test_gaussian_model_deterministic():
    a = se.gen_gaussian_model(1, 1, seed=7)
    b = se.gen_gaussian_model(1, 1, seed=7)
    assert a.entries.shape == (1, 1)
    assert a.entries[0, 0] == b.entries[0, 0]


def test_gaussian_row_norm_mean():
    A = se.gen_gaussian_model(500, 100, seed=1).entries
    sq = np.sum(A * A, axis=1)
    assert abs(sq.mean() - 100) <= 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_gaussian_isotropy_shrinks():
    errs = []
    for n in (400, 40_000):
        A = se.gen_gaussian_model(n, 5, seed=2).entries
        errs.append(np.abs(A.T @ A / n - np.eye(5)).max())
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_dct_rows():
    m = se._dct_from_freqs(np.array([0.0, 0.25]), 4)
    np.testing.assert_allclose(m.entries[0], np.ones(4))
    np.testing.assert_allclose(m.entries[1], [1, 0, -1, 0], atol=1e-12)


def test_dct_second_moment_half_identity():
    n, d = 10_000, 8
    A = se.gen_dct_model(n, d, seed=3).entries
    outer = A[:, :, None] * A[:, None, :]
    mean = outer.mean(axis=0)
    se_ = outer.std(axis=0, ddof=1) / np.sqrt(n)
    # the identity needs t + s != 0 mod d; check those entries
    t = np.arange(d)
    ok = ((t[:, None] + t[None, :]) % d) != 0
    target = 0.5 * np.eye(d)
    assert np.all(np.abs(mean - target)[ok] <= 3 * se_[ok] + 1e-12)


def test_sparse_signal_support():
    x = se.gen_signal("sparse", 100, sparsity=10, seed=4)
    assert np.count_nonzero(x.values) == 10
    assert not np.any(se.gen_signal("sparse", 100, sparsity=0, seed=4).values)


def test_lowrank_signal_rank():
    X = se.gen_signal("lowrank", (30, 30), rank=2, seed=5).values
    sv = np.linalg.svd(X, compute_uv=False)
    assert sv[1] > 1e-8 * sv[0]
    assert sv[2] <= 1e-10 * sv[0]


def test_unknown_role_rejected():
    with pytest.raises(ValueError):
        se.gen_signal("banded", 10)


def test_quantize_examples():
    model = se.SamplingModel("explicit", np.array([[1.0]]))
    pos = se.quantize(model, np.array([0.5]), thresholds=np.array([[0.2]]))
    assert pos.signs[0, 0] == 1
    tie = se.quantize(model, np.array([0.2]), thresholds=np.array([[0.2]]))
    assert tie.signs[0, 0] == 1


def test_zero_threshold_matches_sign_oracle():
    model = se.gen_gaussian_model(50, 8, seed=6)
    x = np.random.default_rng(6).standard_normal(8)
    meas = se.quantize(model, x, thresholds=np.zeros((50, 1)))
    brute = [1 if float(row @ x) >= 0 else -1 for row in model.entries]
    assert meas.signs[:, 0].tolist() == brute


def test_dynamic_range():
    model = se.SamplingModel("explicit", np.eye(2))
    assert se.dynamic_range(model, np.array([1.0, -3.0])) == 3.0
    assert se.dynamic_range(model, np.zeros(2)) == 0.0
    big = se.gen_gaussian_model(100, 10, seed=8)
    x = np.arange(10.0)
    assert se.dynamic_range(big, x) == max(abs(float(r @ x)) for r in big.entries)


def test_uniform_dr_thresholds_in_range():
    model = se.gen_gaussian_model(200, 10, seed=9)
    x = np.ones(10)
    meas = se.quantize(model, x, se.DitherConfig("uniform_dr", m=3), seed=9)
    assert np.abs(meas.thresholds).max() <= se.dynamic_range(model, x)
    assert meas.thresholds.shape == (200, 3)


def test_ditherless_thresholds_zero():
    model = se.gen_gaussian_model(20, 4, seed=10)
    meas = se.quantize(model, np.ones(4), se.DitherConfig("none"), seed=10)
    assert not np.any(meas.thresholds)


def test_config_validation():
    with pytest.raises(ValueError):
        se.DitherConfig("laplace")
    with pytest.raises(ValueError):
        se.DitherConfig("uniform", m=0)
    with pytest.raises(ValueError):
        se.NoiseConfig("gaussian", sigma=-1)
    with pytest.raises(ValueError):
        se.NoiseConfig("impulsive", p=1.5)


def test_impulsive_noise_fraction():
    z = se.draw_noise(se.NoiseConfig("impulsive", p=0.05, amp=10.0), 20_000, 1, np.random.default_rng(0))
    frac = np.mean(np.abs(z) == 10.0)
    assert abs(frac - 0.05) < 0.01


def test_oracle_reproduces_noiseless_signs():
    model = se.gen_gaussian_model(30, 5, seed=11)
    x = np.random.default_rng(11).standard_normal(5)
    meas = se.quantize(model, x, se.DitherConfig("gaussian", m=2), seed=11)
    oracle = se.make_oracle(model, x)
    np.testing.assert_array_equal(oracle(meas.thresholds), meas.signs)


def _roundtrip_meas(seed, kind="gaussian"):
    if kind == "dct":
        model = se.gen_dct_model(40, 9, seed=seed)
    elif kind == "matrix":
        model = se.gen_matrix_sensing_model(40, 3, 4, seed=seed)
    else:
        model = se.gen_gaussian_model(40, 9, seed=seed)
    x = np.random.default_rng(seed).standard_normal(model.d)
    return se.quantize(model, x, se.DitherConfig("gaussian", m=3), seed=seed)


@pytest.mark.parametrize("kind", ["gaussian", "dct", "matrix"])
def test_json_roundtrip(kind):
    meas = _roundtrip_meas(12, kind)
    back = se.OneBitMeasurements.from_json(meas.to_json())
    np.testing.assert_array_equal(back.signs, meas.signs)
    np.testing.assert_array_equal(back.thresholds, meas.thresholds)
    np.testing.assert_allclose(back.model.entries, meas.model.entries, rtol=0, atol=1e-15)
    assert back.model.signal_shape == meas.model.signal_shape


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_file_roundtrip(tmp_path, suffix):
    meas = _roundtrip_meas(13)
    path = tmp_path / f"meas{suffix}"
    meas.save(path)
    back = se.OneBitMeasurements.load(path)
    np.testing.assert_array_equal(back.signs, meas.signs)
    np.testing.assert_array_equal(back.thresholds, meas.thresholds)
    np.testing.assert_array_equal(back.model.entries, meas.model.entries)


def test_measurement_validation():
    model = se.SamplingModel("explicit", np.eye(2))
    with pytest.raises(ValueError):
        se.OneBitMeasurements(np.array([1, 0]), np.zeros(2), model)
    with pytest.raises(ValueError):
        se.OneBitMeasurements(np.array([1, 1, 1]), np.zeros(3), model)


@settings(max_examples=40, deadline=None)
@given(
    n=hst.integers(1, 30),
    d=hst.integers(1, 8),
    m=hst.integers(1, 4),
    seed=hst.integers(0, 2**31 - 1),
    law=hst.sampled_from(["gaussian", "uniform", "uniform_dr", "none"]),
)
def test_noiseless_signal_is_feasible(n, d, m, seed, law):
    model = se.gen_gaussian_model(n, d, seed=seed)
    x = np.random.default_rng(seed).standard_normal(d)
    meas = se.quantize(model, x, se.DitherConfig(law, m=m), seed=seed)
    slack = meas.signs * (model.apply(x)[:, None] - meas.thresholds)
    assert np.all(slack >= 0)
    ok, bad = orka.consistency_check(orka.build_polyhedron(meas), x)
    assert ok and bad == 0


@settings(max_examples=30, deadline=None)
@given(seed=hst.integers(0, 2**31 - 1), n=hst.integers(1, 40), m=hst.integers(1, 5))
def test_json_roundtrip_property(seed, n, m):
    model = se.gen_gaussian_model(n, 3, seed=seed)
    meas = se.quantize(model, np.ones(3), se.DitherConfig("gaussian", m=m), seed=seed)
    back = se.OneBitMeasurements.from_json(meas.to_json())
    np.testing.assert_array_equal(back.signs, meas.signs)
    np.testing.assert_array_equal(back.thresholds, meas.thresholds)
