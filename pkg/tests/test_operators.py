import math

import numpy as np
import pytest
from scipy import stats

from spm.operators import (
    FractionalParams,
    JumpCapExceeded,
    abs_gamma_neg_half_alpha,
    advect,
    diffuse,
    fractional_jump,
    gamma_function,
    sample_exponential_gap,
    sample_powerlaw_scale,
)


class _FixedUniform:
    """Generator stub returning a prescribed uniform value."""

    def __init__(self, u):
        self.u = u

    def random(self, size=None):
        if size is None:
            return self.u
        return np.full(size, self.u)


# ---------------------------------------------------------------------------
# gamma function and derived constants
# ---------------------------------------------------------------------------

class TestGamma:
    @pytest.mark.parametrize("x", [0.25, 0.5, 1.0, 1.75, 3.0, 7.5, 12.0])
    def test_against_stdlib(self, x):
        assert gamma_function(x) == pytest.approx(math.gamma(x), rel=1e-12)

    @pytest.mark.parametrize("x", [-0.75, -0.25, -1.5, -2.3])
    def test_negative_arguments_via_reflection(self, x):
        assert gamma_function(x) == pytest.approx(math.gamma(x), rel=1e-11)

    def test_pole_rejected(self):
        with pytest.raises(ValueError):
            gamma_function(0.0)
        with pytest.raises(ValueError):
            gamma_function(-2.0)

    def test_abs_gamma_neg_three_quarters(self):
        # |Gamma(-0.75)| = Gamma(0.25)/0.75 via the recurrence
        oracle = math.gamma(0.25) / 0.75
        assert abs_gamma_neg_half_alpha(1.5) == pytest.approx(oracle, rel=1e-11)
        assert oracle == pytest.approx(4.834146544295877, rel=1e-12)


class TestFractionalParams:
    def test_coefficients_for_reference_cutoff(self):
        p = FractionalParams(1.5, 0.005)
        g = math.gamma(0.25) / 0.75
        gamma_ref = 0.005 ** (-0.75) / (0.75 * g)
        c_ref = 0.005 ** 0.25 / (0.25 * g)
        assert p.gamma_coeff == pytest.approx(gamma_ref, rel=1e-12)
        assert p.c_coeff == pytest.approx(c_ref, rel=1e-12)
        # rounded values used throughout the studies
        assert p.gamma_coeff == pytest.approx(14.6687, rel=1e-4)
        assert p.c_coeff == pytest.approx(0.2200, rel=2e-3)

    def test_validation(self):
        with pytest.raises(ValueError):
            FractionalParams(2.0, 0.01)
        with pytest.raises(ValueError):
            FractionalParams(1.5, -1.0)


# ---------------------------------------------------------------------------
# advection / diffusion
# ---------------------------------------------------------------------------

class TestAdvect:
    def test_shift(self):
        out = advect(np.array([1.0, 2.0]), np.array([1.0, 1.0]), 0.1)
        assert np.allclose(out, [0.9, 1.9])

    def test_zero_tau_identity(self):
        x = np.array([3.0, -1.0])
        assert np.array_equal(advect(x, np.array([2.0, 5.0]), 0.0), x)

    def test_involution(self):
        # exact when b*tau is representable; tight otherwise
        x = np.random.default_rng(0).integers(-8, 8, size=(10, 3)).astype(float)
        b = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(advect(advect(x, b, 0.5), -b, 0.5), x)
        y = np.random.default_rng(1).normal(size=(10, 3))
        assert np.allclose(advect(advect(y, b, 0.7), -b, 0.7), y, atol=1e-15)


class TestDiffuse:
    def test_zero_coefficient_identity(self, rng):
        x = np.ones((100, 2))
        assert np.array_equal(diffuse(x, 0.0, 0.5, rng), x)

    def test_variance_and_isotropy(self, rng):
        n = 1_000_000
        x = np.zeros((n, 2))
        y = diffuse(x, 1.0, 0.5, rng)  # per-axis variance 2*c*tau = 1
        v = y.var(axis=0)
        assert np.allclose(v, 1.0, atol=0.005)
        cov = float(np.mean(y[:, 0] * y[:, 1]))
        assert abs(cov) < 0.005

    def test_semigroup_against_gaussian_convolution(self, rng):
        # E[phi(x - y)] for phi = exp(-x^2): closed-form Gaussian convolution
        c, tau, x0 = 0.7, 0.3, 0.4
        n = 1_000_000
        pts = diffuse(np.full((n, 1), x0), c, tau, rng)
        est = float(np.mean(np.exp(-pts[:, 0] ** 2)))
        s2 = 2 * c * tau
        exact = math.exp(-x0**2 / (1 + 2 * s2)) / math.sqrt(1 + 2 * s2)
        se = float(np.std(np.exp(-pts[:, 0] ** 2))) / math.sqrt(n)
        assert abs(est - exact) < 4 * se

    def test_negative_coefficient_rejected(self, rng):
        with pytest.raises(ValueError):
            diffuse(np.zeros((1, 1)), -1.0, 0.1, rng)


# ---------------------------------------------------------------------------
# elementary jump-law samplers
# ---------------------------------------------------------------------------

class TestExponentialGap:
    def test_inverse_cdf_at_half(self):
        t = sample_exponential_gap(14.67, _FixedUniform(0.5))
        assert t == pytest.approx(math.log(2) / 14.67, rel=1e-12)

    def test_mean_and_median(self, rng):
        g = 14.67
        draws = sample_exponential_gap(g, rng, 1_000_000)
        se = 1.0 / (g * 1000.0)
        assert abs(draws.mean() - 1.0 / g) < 3 * se
        assert np.median(draws) == pytest.approx(math.log(2) / g, rel=0.01)

    def test_rejects_bad_rate(self, rng):
        with pytest.raises(ValueError):
            sample_exponential_gap(0.0, rng)


class TestPowerlawScale:
    def test_inverse_cdf_at_half(self):
        s = sample_powerlaw_scale(1.5, 0.005, _FixedUniform(0.5))
        assert s == pytest.approx(0.005 * 2 ** (4.0 / 3.0), rel=1e-12)

    def test_support_lower_endpoint(self, rng):
        draws = sample_powerlaw_scale(1.5, 0.005, rng, 100_000)
        assert draws.min() >= 0.005
        near_one = sample_powerlaw_scale(1.5, 0.005, _FixedUniform(1e-12))
        assert near_one == pytest.approx(0.005, rel=1e-9)

    def test_tail_probability(self, rng):
        # P(s > 2 eps) = 2^(-alpha/2)
        draws = sample_powerlaw_scale(1.5, 0.005, rng, 1_000_000)
        p = float(np.mean(draws > 0.01))
        target = 2 ** -0.75
        se = math.sqrt(target * (1 - target) / 1_000_000)
        assert abs(p - target) < 3 * se


# ---------------------------------------------------------------------------
# compound fractional walk
# ---------------------------------------------------------------------------

class TestFractionalJump:
    def test_mean_jump_count(self, rng):
        params = FractionalParams(1.5, 0.005)
        tau = 0.1
        n = 100_000
        counts = np.empty(n, dtype=np.int64)
        fractional_jump(np.zeros((n, 1)), params, tau, rng, jump_counts_out=counts)
        lam = params.gamma_coeff * tau
        se = math.sqrt(lam / n)
        assert abs(counts.mean() - lam) < 3 * se
        assert lam == pytest.approx(1.4669, rel=1e-3)

    def test_zero_jump_variance(self, rng):
        # conditioned on no completed jump the variance budget is exactly
        # c_coeff * tau per coordinate (times 2 in the Gaussian)
        params = FractionalParams(1.5, 0.005)
        tau = 0.1
        n = 200_000
        counts = np.empty(n, dtype=np.int64)
        out = fractional_jump(
            np.zeros((n, 1)), params, tau, rng, jump_counts_out=counts
        )
        quiet = out[counts == 0, 0]
        target = 2 * params.c_coeff * tau
        se = target * math.sqrt(2.0 / quiet.size)
        assert abs(quiet.var() - target) < 4 * se

    def test_poisson_law_chi_square(self, rng):
        params = FractionalParams(1.5, 0.005)
        tau = 0.1
        n = 100_000
        counts = np.empty(n, dtype=np.int64)
        fractional_jump(np.zeros((n, 1)), params, tau, rng, jump_counts_out=counts)
        lam = params.gamma_coeff * tau
        kmax = 8
        obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
        probs = np.array([stats.poisson.pmf(k, lam) for k in range(kmax)])
        probs = np.append(probs, 1.0 - probs.sum())
        chi2 = float(np.sum((obs - n * probs) ** 2 / (n * probs)))
        crit = stats.chi2.ppf(0.99, df=kmax)
        assert chi2 < crit

    def test_single_point_shape(self, rng):
        params = FractionalParams(1.5, 0.005)
        out = fractional_jump(np.zeros(3), params, 0.1, rng)
        assert out.shape == (3,)

    def test_jump_cap(self, rng):
        params = FractionalParams(1.5, 0.005)
        with pytest.raises(JumpCapExceeded):
            fractional_jump(np.zeros((64, 1)), params, 10.0, rng, max_jumps=2)

    def test_kernel_order_commutes_in_distribution(self):
        # advect/diffuse/jump in either order: same one-step marginal
        params = FractionalParams(1.5, 0.005)
        tau, c, b = 0.1, 0.5, np.array([1.0])
        n = 200_000
        g1 = np.random.default_rng(1)
        a = fractional_jump(
            diffuse(advect(np.zeros((n, 1)), b, tau), c, tau, g1), params, tau, g1
        )
        g2 = np.random.default_rng(2)
        bvals = advect(
            diffuse(fractional_jump(np.zeros((n, 1)), params, tau, g2), c, tau, g2),
            b, tau,
        )
        ks = stats.ks_2samp(a[:, 0], bvals[:, 0])
        assert ks.pvalue > 0.01
