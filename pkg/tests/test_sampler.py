import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physprior.errors import InvalidArgument
from physprior.metrics import fit_order, rel_l2
from physprior.prior import Denoiser, MixtureOraclePrior
from physprior.sampler import (GuidanceConfig, MeasurementOp, Observation, SigmaSchedule,
                               guidance_gradient, integrate, karras_sigmas, prior_step,
                               sample_ensemble, sample_posterior)


def test_karras_endpoints_and_formula():
    s = karras_sigmas()
    assert len(s) == 65 and s[-1] == 0
    assert s[0] == 80.0 and s[63] == 0.002
    # independent evaluation of the interior formula at i = 32
    a, b = 80 ** (1 / 7), 0.002 ** (1 / 7)
    assert s[32] == pytest.approx((a + 32 / 63 * (b - a)) ** 7, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 12.0), st.integers(2, 80))
def test_karras_strictly_decreasing(rho, n):
    s = karras_sigmas(SigmaSchedule(0.002, 80.0, rho, n))
    assert np.all(np.diff(s) < 0)


def test_karras_rho_one_is_arithmetic():
    s = karras_sigmas(SigmaSchedule(1.0, 9.0, 1.0, 5))
    np.testing.assert_allclose(s, [9, 7, 5, 3, 1, 0])


def test_schedule_validation():
    with pytest.raises(InvalidArgument):
        SigmaSchedule(sigma_min=0.0)
    with pytest.raises(InvalidArgument):
        SigmaSchedule(rho=0.5)


class IdentityDenoiser(Denoiser):
    shape = (1, 4, 4)

    def denoise(self, x, sigma, c):
        return np.array(x, dtype=float)


def test_identity_denoiser_step_is_stationary(rng):
    x = rng.standard_normal((1, 4, 4))
    np.testing.assert_array_equal(prior_step(x, 2.0, 1.0, IdentityDenoiser(), 0), x)
    with pytest.raises(InvalidArgument):
        prior_step(x, 1.0, 2.0, IdentityDenoiser(), 0)


def test_single_sample_sweep_recovers_sample(rng):
    X = rng.standard_normal((1, 3, 8, 8))
    prior = MixtureOraclePrior({0: X})
    for seed in range(3):
        out = sample_posterior(prior, 0, seed=seed)
        assert rel_l2(out, X[0]).value < 1e-9


def test_single_sample_linear_ode_exact(rng):
    # dx/dsigma = (x - x1)/sigma has solution x1 + (sigma/sigma0)(x0 - x1); Heun is exact
    X = rng.standard_normal((1, 1, 4, 4))
    prior = MixtureOraclePrior({0: X})
    x0 = rng.standard_normal((1, 4, 4))
    sig = [4.0, 2.5, 1.0]
    out = integrate(x0, sig, prior, 0)
    np.testing.assert_allclose(out, X[0] + (1.0 / 4.0) * (x0 - X[0]), rtol=1e-13)


def order_case(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2, 1, 4, 4))
    x_start = X.mean(0) + 0.5 * rng.standard_normal((1, 4, 4))
    prior = MixtureOraclePrior({0: X})
    ref = integrate(x_start, np.linspace(4.0, 1.0, 10001), prior, 0)
    ns = [16, 32, 64, 128]
    errs = [np.linalg.norm(integrate(x_start, np.linspace(4.0, 1.0, n + 1), prior, 0) - ref)
            for n in ns]
    return fit_order(3.0 / np.array(ns), errs), errs


def test_heun_is_second_order():
    order, errs = order_case(0)
    assert order >= 1.8
    assert errs[-2] / errs[-1] == pytest.approx(4.0, rel=0.25)


def mixture_case(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, 1, 8, 8))
    prior = MixtureOraclePrior({0: X})
    masks = rng.random((1, 8, 8)) < 0.4
    op = MeasurementOp(masks)
    y = rng.standard_normal(op.size)
    return prior, op, Observation(y, op), rng


def test_exact_guidance_matches_fd_of_misfit():
    prior, op, obs, rng = mixture_case(3)
    sigma = 0.8
    x = rng.standard_normal((1, 8, 8))
    cfg = GuidanceConfig("fixed", 1.0, "exact_oracle", hard_replace=False)
    x0 = prior.denoise(x, sigma, 0)
    g = guidance_gradient(x, x0, obs, cfg, prior, sigma, 0)

    def misfit(z):
        return float(np.sum((obs.values - op(prior.denoise(z, sigma, 0))) ** 2))

    h = 1e-5
    numeric = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        numeric[idx] = -(misfit(x + e) - misfit(x - e)) / (2 * h)
    assert np.linalg.norm(g - numeric) / np.linalg.norm(numeric) < 1e-4


def test_identity_guidance_unit_residual():
    masks = np.zeros((1, 2, 2), bool)
    masks[0, 1, 0] = True
    op = MeasurementOp(masks)
    x0 = np.zeros((1, 2, 2))
    obs = Observation([1.0], op)
    g = guidance_gradient(x0, x0, obs, GuidanceConfig("fixed", 1.0, "identity"))
    assert g[0, 1, 0] == 2.0
    assert np.count_nonzero(g) == 1


def test_zero_residual_gives_zero_gradient(rng):
    prior, op, _, rng = mixture_case(4)
    x = rng.standard_normal((1, 8, 8))
    x0 = prior.denoise(x, 1.0, 0)
    obs = op.observe(x0)
    for mode in ("fixed", "residual_normalized"):
        g = guidance_gradient(x, x0, obs, GuidanceConfig(mode, 1.0), prior, 1.0, 0)
        assert np.all(g == 0)


def test_residual_normalized_scale(rng):
    op = MeasurementOp(np.ones((1, 2, 2), bool))
    x0 = np.zeros((1, 2, 2))
    obs = Observation([3.0, 4.0, 0.0, 0.0], op)
    g = guidance_gradient(x0, x0, obs, GuidanceConfig("residual_normalized", 1.0, "identity"))
    np.testing.assert_allclose(g.ravel(), 2 * np.array([3, 4, 0, 0]) / (5 + 1e-8))


def test_measurement_operator_linear_adjoint(rng):
    masks = rng.random((3, 5, 5)) < 0.5
    op = MeasurementOp(masks, channels=[0, 2])
    assert op.size == masks[0].sum() + masks[2].sum()
    x, y = rng.standard_normal((3, 5, 5)), rng.standard_normal(op.size)
    assert np.dot(op(x), y) == pytest.approx(np.sum(x * op.adjoint(y)))
    np.testing.assert_array_equal(op(op.adjoint(op(x))), op(x))
    assert np.all(op(np.zeros((3, 5, 5))) == 0)
    with pytest.raises(InvalidArgument):
        Observation(np.zeros(op.size + 1), op)


def test_guidance_off_reduces_to_prior_sampling():
    prior, op, obs, _ = mixture_case(5)
    a = sample_posterior(prior, 0, obs, GuidanceConfig(mode="off"), seed=9)
    b = sample_posterior(prior, 0, None, None, seed=9)
    assert a.tobytes() == b.tobytes()


def test_sampling_deterministic_and_ensemble_consistent():
    prior, op, obs, _ = mixture_case(6)
    cfg = GuidanceConfig("residual_normalized", 1.0)
    a = sample_posterior(prior, 0, obs, cfg, seed=2)
    assert a.tobytes() == sample_posterior(prior, 0, obs, cfg, seed=2).tobytes()
    from physprior.sampler import member_seed
    ens = sample_ensemble(prior, 0, obs, cfg, M=3, seed=2)
    for j in range(3):
        np.testing.assert_allclose(ens[j], sample_posterior(prior, 0, obs, cfg,
                                                            seed=member_seed(2, j)), rtol=1e-12,
                                   atol=1e-12)
    with pytest.raises(InvalidArgument):
        sample_ensemble(prior, 0, obs, cfg, M=0)


def test_sparse_ensemble_members_differ():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 1, 8, 8))
    prior = MixtureOraclePrior({0: X})
    op = MeasurementOp(rng.random((1, 8, 8)) < 0.1)
    obs = op.observe(X[0])
    ens = sample_ensemble(prior, 0, obs, GuidanceConfig(), M=4, seed=1)
    assert np.all(np.isfinite(ens))
    assert not np.allclose(ens[0], ens[1])


def test_full_observation_recovers_held_in_sample():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 3, 8, 8))
    prior = MixtureOraclePrior({0: X})
    op = MeasurementOp(np.ones((3, 8, 8), bool))
    out = sample_posterior(prior, 0, op.observe(X[7]), GuidanceConfig("fixed", 2.0), seed=0)
    assert rel_l2(out, X[7]).value < 1.0


def test_residual_decreases_under_full_observation():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((15, 2, 8, 8))
    prior = MixtureOraclePrior({0: X})
    masks = np.zeros((2, 8, 8), bool)
    masks[1] = True
    op = MeasurementOp(masks)
    wins = 0
    for seed in range(20):
        trace = []
        target = X[seed % 15] + 0.05 * rng.standard_normal((2, 8, 8))
        sample_posterior(prior, 0, op.observe(target), GuidanceConfig("fixed", 2.0), seed=seed,
                         trace=trace)
        wins += trace[-1] < trace[0]
    assert wins >= 19
