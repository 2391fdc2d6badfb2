import numpy as np
import pytest

from lowrank_eiv import simulate
from lowrank_eiv.rng import substream


def test_substream_determinism():
    a = substream(7, "design", 3).standard_normal(4)
    b = substream(7, "design", 3).standard_normal(4)
    assert np.array_equal(a, b)
    c = substream(7, "design", 4).standard_normal(4)
    d = substream(8, "design", 3).standard_normal(4)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_covariance_spec_identity_and_ar1():
    ident = simulate.CovarianceSpec.identity(4, scale=0.25)
    assert np.array_equal(ident.dense(), 0.25 * np.eye(4))
    assert ident.op_norm == 0.25
    assert ident.lambda_min == 0.25
    ar = simulate.CovarianceSpec.ar1(3, phi=0.3)
    want = np.array([[1.0, 0.3, 0.09], [0.3, 1.0, 0.3], [0.09, 0.3, 1.0]])
    assert np.allclose(ar.dense(), want, atol=1e-15)
    ev = np.linalg.eigvalsh(want)
    assert abs(ar.lambda_min - ev[0]) < 1e-12
    assert abs(ar.op_norm - ev[-1]) < 1e-12
    v = np.arange(3.0)
    assert np.allclose(ar.apply(v), want @ v, atol=1e-12)


def test_covariance_spec_validation():
    with pytest.raises(ValueError):
        simulate.CovarianceSpec.ar1(3, phi=1.0)
    with pytest.raises(ValueError):
        simulate.CovarianceSpec.identity(3, scale=0.0)
    with pytest.raises(ValueError):
        simulate.CovarianceSpec.explicit(np.array([[1.0, 2.0], [2.0, 1.0]]))  # not PD
    with pytest.raises(ValueError):
        simulate.CovarianceSpec.explicit(np.array([[1.0, 0.5], [0.2, 1.0]]))  # asymmetric
    good = simulate.CovarianceSpec.explicit(np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert good.dim == 2


def test_gen_true_low_rank_frozen():
    m = simulate.gen_true_low_rank(3, 3, 1, np.array([2.0]), seed=11)
    assert np.linalg.norm(m.theta, 2) == pytest.approx(2.0, abs=1e-10)
    assert np.linalg.matrix_rank(m.theta) == 1
    m2 = simulate.gen_true_low_rank(5, 5, 2, np.array([5.0, 3.0]), seed=11)
    sv = np.linalg.svd(m2.theta, compute_uv=False)
    assert abs(sv.sum() - 8.0) < 1e-10
    assert abs(np.linalg.norm(m2.theta) - np.sqrt(34.0)) < 1e-10
    assert np.allclose(sv[:2], [5.0, 3.0], atol=1e-10)
    again = simulate.gen_true_low_rank(5, 5, 2, np.array([5.0, 3.0]), seed=11)
    assert np.array_equal(m2.theta, again.theta)
    other = simulate.gen_true_low_rank(5, 5, 2, np.array([5.0, 3.0]), seed=12)
    assert not np.array_equal(m2.theta, other.theta)


def test_gen_true_low_rank_validation():
    with pytest.raises(ValueError):
        simulate.gen_true_low_rank(3, 3, 4, np.ones(4), seed=0)
    with pytest.raises(ValueError):
        simulate.gen_true_low_rank(3, 3, 2, np.array([1.0, 2.0]), seed=0)  # not sorted
    with pytest.raises(ValueError):
        simulate.gen_true_low_rank(3, 3, 2, np.array([1.0, 0.0]), seed=0)  # not positive


def test_true_model_factors_orthonormal():
    m = simulate.gen_true_low_rank(6, 4, 3, np.array([3.0, 2.0, 1.0]), seed=5)
    assert np.max(np.abs(m.u.T @ m.u - np.eye(3))) < 1e-10
    assert np.max(np.abs(m.v.T @ m.v - np.eye(3))) < 1e-10
    rec = (m.u * m.spectrum) @ m.v.T
    assert np.allclose(rec, m.theta, atol=0.0)


def test_sample_design_identity_covariance():
    n = 20000
    sx = simulate.CovarianceSpec.identity(9)
    x = simulate.sample_design(n, 3, 3, sx, seed=21)
    flat = x.reshape(n, 9)
    emp = flat.T @ flat / n
    assert np.max(np.abs(emp - np.eye(9))) < 5.0 / np.sqrt(n)


def test_sample_design_ar1_zero_is_identity():
    sx0 = simulate.CovarianceSpec.ar1(9, phi=0.0)
    sxi = simulate.CovarianceSpec.identity(9)
    a = simulate.sample_design(50, 3, 3, sx0, seed=4)
    b = simulate.sample_design(50, 3, 3, sxi, seed=4)
    assert np.allclose(a, b, atol=1e-12)


def test_sample_design_schedule_independence():
    sx = simulate.CovarianceSpec.ar1(6, phi=0.3)
    long = simulate.sample_design(10, 2, 3, sx, seed=9)
    short = simulate.sample_design(4, 2, 3, sx, seed=9)
    assert np.array_equal(long[:4], short)


def test_sample_design_covariance_shaping():
    n = 20000
    sx = simulate.CovarianceSpec.ar1(4, phi=0.5, scale=2.0)
    x = simulate.sample_design(n, 2, 2, sx, seed=33)
    flat = x.reshape(n, 4)
    emp = flat.T @ flat / n
    assert np.max(np.abs(emp - sx.dense())) < 5.0 * sx.op_norm / np.sqrt(n)


def test_observe():
    model = simulate.gen_true_low_rank(4, 3, 2, np.array([2.0, 1.0]), seed=2)
    x0 = model.theta / np.linalg.norm(model.theta)
    x = np.stack([x0, np.zeros_like(x0)])
    y = simulate.observe(x, model, sigma_eps=0.0, seed=3)
    assert abs(y[0] - np.linalg.norm(model.theta)) < 1e-12
    assert y[1] == 0.0

    zero_model = simulate.TrueModel(
        theta=np.zeros((4, 3)),
        rank=1,
        spectrum=np.array([1.0]),
        u=np.eye(4)[:, :1],
        v=np.eye(3)[:, :1],
    )
    eps = simulate.observe(x, zero_model, sigma_eps=0.5, seed=3)
    eps2 = simulate.observe(x, zero_model, sigma_eps=0.5, seed=3)
    assert np.array_equal(eps, eps2)
    assert np.std(eps) >= 0.0  # pure noise path, reproducible


def test_corrupt_additive():
    sx = simulate.CovarianceSpec.identity(6)
    x = simulate.sample_design(20, 2, 3, sx, seed=1)
    tiny = simulate.CovarianceSpec.identity(6, scale=1e-12)
    z = simulate.corrupt_additive(x, tiny, seed=2)
    assert np.max(np.abs(z - x)) < 1e-5
    z2 = simulate.corrupt_additive(x, tiny, seed=2)
    assert np.array_equal(z, z2)


def test_corrupt_additive_covariance():
    n = 20000
    x = np.zeros((n, 2, 2))
    sw = simulate.CovarianceSpec.ar1(4, phi=0.4, scale=0.5)
    w = simulate.corrupt_additive(x, sw, seed=13)
    flat = w.reshape(n, 4)
    emp = flat.T @ flat / n
    assert np.max(np.abs(emp - sw.dense())) < 5.0 * sw.op_norm / np.sqrt(n)


def test_corrupt_missing():
    sx = simulate.CovarianceSpec.identity(6)
    x = simulate.sample_design(3000, 2, 3, sx, seed=7)
    z, mask = simulate.corrupt_missing(x, rho=0.0, seed=8)
    assert np.array_equal(z, x)
    assert not mask.any()

    z, mask = simulate.corrupt_missing(x, rho=0.5, seed=8)
    assert mask.dtype == bool
    assert np.all(z[mask] == 0.0)
    assert np.array_equal(z[~mask], x[~mask])
    frac_observed = 1.0 - mask.mean()
    se = np.sqrt(0.25 / mask.size)
    assert abs(frac_observed - 0.5) < 3.0 * se

    with pytest.raises(ValueError):
        simulate.corrupt_missing(x, rho=1.0, seed=8)
    with pytest.raises(ValueError):
        simulate.corrupt_missing(x, rho=-0.1, seed=8)


def test_estimate_missing_rate():
    mask = np.zeros((10, 2, 2), dtype=bool)
    mask[0] = True
    assert simulate.estimate_missing_rate(mask) == pytest.approx(0.1)


@pytest.mark.parametrize("corruption", ["none", "additive", "missing"])
def test_dataset_roundtrip(tmp_path, corruption):
    sx = simulate.CovarianceSpec.ar1(6, phi=0.3)
    sw = simulate.CovarianceSpec.identity(6, scale=0.25) if corruption == "additive" else None
    rho = 0.3 if corruption == "missing" else 0.0
    obs, model = simulate.make_dataset(
        d1=2,
        d2=3,
        rank=1,
        spectrum=np.array([2.0]),
        sigma_x=sx,
        corruption=corruption,
        sigma_w=sw,
        rho=rho,
        sigma_eps=0.5,
        n=40,
        seed=99,
    )
    path = tmp_path / "data.npz"
    simulate.save_dataset(path, obs, model)
    obs2, model2 = simulate.load_dataset(path)

    assert np.array_equal(obs.y, obs2.y)
    assert np.array_equal(obs.z, obs2.z)
    assert obs.corruption == obs2.corruption
    assert obs.rho == obs2.rho
    assert obs.sigma_eps == obs2.sigma_eps
    assert obs.seed == obs2.seed
    if corruption == "missing":
        assert np.array_equal(obs.mask, obs2.mask)
    if corruption == "additive":
        assert np.array_equal(obs.sigma_w.dense(), obs2.sigma_w.dense())
    assert np.array_equal(model.theta, model2.theta)
    assert np.array_equal(model.spectrum, model2.spectrum)
    assert np.array_equal(model.u, model2.u)
    assert np.array_equal(model.v, model2.v)
    assert model.rank == model2.rank


def test_make_dataset_observation_invariants():
    sx = simulate.CovarianceSpec.identity(4)
    obs, model = simulate.make_dataset(
        d1=2,
        d2=2,
        rank=1,
        spectrum=np.array([3.0]),
        sigma_x=sx,
        corruption="missing",
        sigma_w=None,
        rho=0.4,
        sigma_eps=0.1,
        n=25,
        seed=5,
    )
    assert obs.y.shape == (25,)
    assert obs.z.shape == (25, 2, 2)
    assert np.all(obs.z[obs.mask] == 0.0)
    with pytest.raises(ValueError):
        simulate.make_dataset(
            d1=2, d2=2, rank=1, spectrum=np.array([3.0]), sigma_x=sx,
            corruption="additive", sigma_w=None, rho=0.0, sigma_eps=0.1, n=5, seed=5,
        )
