import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jcaslab import distributions as D
from jcaslab import numerics
from jcaslab.errors import DegenerateRateError, DomainError
from jcaslab.system_model import make_constellation

from .oracle_values import (CONV_PDF, KTILDE_PSK_PSK_HALF, KTILDE_QAM_PSK_03,
                            KTILDE_QAM_QAM_HALF, SPECTRUM_SF)


class TestScaleSpectrum:
    def test_entries_merged_and_sorted(self):
        sp = D.ScaleSpectrum(((1.0, 3), (4.0, 1), (1.0, 2)))
        assert sp.entries == ((4.0, 1), (1.0, 5))
        assert sp.total_multiplicity == 6

    @pytest.mark.parametrize("bad", [((0.0, 1),), ((1.0, 0),), ((1.0, 1.5),), ()])
    def test_rejects_invalid(self, bad):
        with pytest.raises(DomainError):
            D.ScaleSpectrum(bad)

    def test_laplace_is_product(self):
        sp = D.ScaleSpectrum(((2.0, 2), (0.5, 3)))
        s = np.array([0.0, 0.3, 2.0])
        np.testing.assert_allclose(sp.laplace(s), (1 + 2 * s) ** -2 * (1 + 0.5 * s) ** -3)

    def test_quadratic_form_weights(self):
        sp = D.ScaleSpectrum(((3.0, 2), (1.0, 5)))
        assert sp.quadratic_form().terms == ((1.5, 4), (0.5, 10))


class TestMoments:
    def test_identities_random_draws(self):
        # mean and variance against the block-sum formulas
        rng = np.random.default_rng(7)
        for _ in range(1000):
            K, N = rng.integers(1, 33, size=2)
            c2 = rng.exponential(1.0, N)
            s2, n2 = rng.uniform(0.1, 3, size=2)
            mom = D.moments_from_spectrum(D.spectrum_from_gains(c2, K, s2, n2))
            mu = K * N * n2 + K * s2 * c2.sum()
            var = N * K * n2 ** 2 + K ** 2 * s2 ** 2 * np.sum(c2 ** 2) + 2 * K * n2 * s2 * c2.sum()
            assert mom.mean == pytest.approx(mu, rel=1e-10)
            assert mom.variance == pytest.approx(var, rel=1e-10)

    def test_spectrum_from_gains_structure(self):
        sp = D.spectrum_from_gains([0.5, 0.5, 2.0], 4, 1.0, 2.0)
        assert dict(sp.entries) == {2.0: 9, 4.0: 2, 10.0: 1}

    def test_sampling_matches_moments(self):
        sp = D.spectrum_from_gains([0.3, 1.2, 0.8], 8, 1.0, 1.5)
        x = sp.sample(np.random.default_rng(3), 200000)
        mom = D.moments_from_spectrum(sp)
        assert x.mean() == pytest.approx(mom.mean, rel=5e-3)
        assert x.var() == pytest.approx(mom.variance, rel=2e-2)


class TestPartialFractions:
    def test_hypoexp_coefficients_sum_to_one(self):
        lam = D.hypoexp_coeffs([0.3, 1.0, 2.5, 4.0])
        assert lam.sum() == pytest.approx(1.0, abs=1e-12)

    def test_coincident_rates_rejected(self):
        with pytest.raises(DegenerateRateError):
            D.hypoexp_coeffs([1.0, 1.0 + 1e-13])

    def test_mixture_reduces_to_hypoexp(self):
        r = np.array([0.3, 1.0, 2.5])
        A = D.erlang_mixture_coeffs(r, [1, 1, 1])
        np.testing.assert_allclose([a[0] for a in A], D.hypoexp_coeffs(r), rtol=1e-12)

    @given(m1=st.integers(1, 6), m2=st.integers(1, 6), m3=st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_mixture_weights_sum_to_one(self, m1, m2, m3):
        A = D.erlang_mixture_coeffs(np.array([0.4, 1.1, 3.0]), [m1, m2, m3])
        assert sum(a.sum() for a in A) == pytest.approx(1.0, abs=1e-9)

    def test_mixture_partial_fractions_reconstruct_transform(self):
        r, m = np.array([0.5, 2.0]), np.array([3, 2])
        A = D.erlang_mixture_coeffs(r, m)
        s = np.array([0.1, 1.0, 7.0])
        recon = sum(a[j - 1] * (rk / (s + rk)) ** j for rk, a in zip(r, A) for j in range(1, a.size + 1))
        direct = np.prod([(rk / (s + rk)) ** mk for rk, mk in zip(r, m)], axis=0)
        np.testing.assert_allclose(recon, direct, rtol=1e-12)

    def test_cluster_rates(self):
        r, m = D.cluster_rates(np.array([1.0, 2.0, 1.0 + 1e-12]), np.array([1, 1, 2]))
        np.testing.assert_allclose(r, [1.0, 2.0])
        assert list(m) == [3, 1]


class TestClosedFormDensity:
    @pytest.mark.parametrize("name", list(CONV_PDF))
    def test_against_quadrature_convolution(self, name):
        rates, M, lam, pts, ref = CONV_PDF[name]
        out = D.signal_noise_sum_pdf(rates, M, lam, np.array(pts, float))
        np.testing.assert_allclose(out, ref, atol=1e-8, rtol=1e-9)

    def test_erlang_convolution_equal_rates_is_erlang(self):
        s = np.array([0.5, 2.0, 6.0])
        out = D.erlang_conv_pdf(2, 1.3, 3, 1.3, s)
        ref = 1.3 ** 5 * s ** 4 * np.exp(-1.3 * s) / math.factorial(4)
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_density_zero_at_negative_support(self):
        assert D.signal_noise_sum_pdf([0.2], 3, 1.0, 0.0) == 0.0
        with pytest.raises(DomainError):
            D.signal_noise_sum_pdf([0.2], 3, 1.0, -1.0)


class TestSpectrumLaw:
    @pytest.mark.parametrize("name", list(SPECTRUM_SF))
    def test_tail_against_reference(self, name):
        entries, xs, ref = SPECTRUM_SF[name]
        law = D.SpectrumLaw(D.ScaleSpectrum(entries))
        np.testing.assert_allclose(law.sf(np.array(xs)), ref, atol=1e-10)

    @pytest.mark.parametrize("name", list(SPECTRUM_SF))
    def test_tail_agrees_with_imhof(self, name):
        entries, xs, _ = SPECTRUM_SF[name]
        sp = D.ScaleSpectrum(entries)
        law = D.SpectrumLaw(sp)
        for x in xs:
            assert law.sf(x) == pytest.approx(numerics.imhof_tail(sp.quadratic_form(), x, 1e-11),
                                              abs=1e-9)

    def test_density_integrates_to_one(self):
        sp = D.spectrum_from_gains([0.2, 1.8, 1.0, 0.04, 1.0], 16, 1.0, 3.0)
        s = D.support_grid(sp, 4001)
        f = D.spectrum_pdf(sp, s)
        assert np.trapezoid(f, s) == pytest.approx(1.0, abs=1e-4)

    def test_density_is_derivative_of_cdf(self):
        sp = D.ScaleSpectrum(((5.0, 2), (1.0, 20), (2.5, 1)))
        law = D.SpectrumLaw(sp)
        x, h = 30.0, 1e-3
        deriv = (law.cdf(x + h) - law.cdf(x - h)) / (2 * h)
        assert law.pdf(x) == pytest.approx(deriv, rel=1e-6)

    def test_ill_conditioned_falls_back_to_inversion(self):
        c2 = np.linspace(0.95, 1.05, 15)
        sp = D.spectrum_from_gains(c2, 16, 1.0, 3.0)
        law = D.SpectrumLaw(sp)
        assert law.used_ilt
        x = 900.0
        assert law.sf(x) == pytest.approx(numerics.imhof_tail(sp.quadratic_form(), x, 1e-11),
                                          abs=1e-8)

    def test_pure_erlang(self):
        law = D.SpectrumLaw(D.ScaleSpectrum(((2.0, 10),)))
        assert law.sf(20.0) == pytest.approx(numerics.chi2_sf(20, 20.0), rel=1e-13)

    @given(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=6))
    @settings(max_examples=25, deadline=None)
    def test_tail_monotone_and_bounded(self, c2):
        law = D.SpectrumLaw(D.spectrum_from_gains(c2, 4, 1.0, 1.0))
        sf = law.sf(np.linspace(0, 80, 40))
        assert np.all((sf >= 0) & (sf <= 1))
        assert np.all(np.diff(sf) <= 1e-9)


def _enumerate_ktilde(consts, w):
    pts = [np.asarray(make_constellation(c).points) for c in consts]
    vals = [abs(sum(math.sqrt(wi) * x for wi, x in zip(w, combo))) ** 4
            for combo in itertools.product(*pts)]
    return float(np.mean(vals))


class TestKurtosis:
    def test_constellation_kurtosis(self):
        assert make_constellation("qam16").kurtosis == pytest.approx(1.32, abs=1e-12)
        assert make_constellation("cm").kurtosis == 1.0

    @pytest.mark.parametrize("consts,w,ref", [
        (("qam16", "qam16"), (0.5, 0.5), KTILDE_QAM_QAM_HALF),
        (("psk8", "psk8"), (0.5, 0.5), KTILDE_PSK_PSK_HALF),
        (("qam16", "psk8"), (0.3, 0.7), KTILDE_QAM_PSK_03),
    ])
    def test_mixture_against_enumeration(self, consts, w, ref):
        k = [make_constellation(c).kurtosis for c in consts]
        val = D.mixture_kurtosis(np.array(w), np.array(k))
        assert val == pytest.approx(ref, abs=1e-12)
        assert val == pytest.approx(_enumerate_ktilde(consts, w), abs=1e-12)

    def test_unnormalized_allocation_rejected(self):
        with pytest.raises(DomainError):
            D.mixture_kurtosis([0.5, 0.6], [1.0, 1.32])

    def test_gaussian_kurtosis_affine(self):
        # kappa = 2 for every stream leaves the allocation irrelevant
        for b in ([1, 0, 0], [0.2, 0.3, 0.5], [1 / 3] * 3):
            assert D.mixture_kurtosis(b, [2, 2, 2]) == pytest.approx(2.0)

    @given(st.floats(1.0, 2.0))
    def test_hessian_nonpositive(self, k):
        assert D.kappa_hessian_diag([k])[0] <= 0

    def test_simplex_search_finds_one_hot(self):
        kappa = np.array([1.32, 1.32, 1.0])
        best, arg = np.inf, None
        steps = np.round(np.arange(0, 1.0001, 0.01), 10)
        for a in steps:
            for b in steps:
                c = 1 - a - b
                if c < -1e-12:
                    continue
                v = D.mixture_kurtosis(np.array([a, b, max(c, 0.0)]), kappa)
                if v < best - 1e-15:
                    best, arg = v, (a, b, max(c, 0.0))
        np.testing.assert_allclose(arg, D.optimal_allocation(kappa))
        assert best == pytest.approx(1.0)

    def test_tie_picks_lowest_index(self):
        np.testing.assert_array_equal(D.optimal_allocation([1.32, 1.0, 1.0]), [0, 1, 0])


class TestGaussianApprox:
    def test_moments_match_spectrum_in_expectation(self):
        # with unit-modulus symbols |c|^2 = 1 exactly, so the CLT moments are exact
        K, N, s2, n2 = 16, 15, 1.0, math.sqrt(10)
        g = D.clt_approx(K, N, s2, n2, 1.0, 1.0)
        mom = D.moments_from_spectrum(D.spectrum_from_gains(np.ones(N), K, s2, n2))
        assert g.mean == pytest.approx(mom.mean, rel=1e-12)
        assert g.std ** 2 == pytest.approx(mom.variance, rel=1e-12)

    def test_pd_decreases_with_kurtosis_above_mean(self):
        K, N = 16, 15
        thr = 877.54
        pds = [D.clt_pd(D.clt_approx(K, N, 1.0, math.sqrt(10), 1.0, k), thr)
               for k in np.linspace(1, 2, 11)]
        assert np.all(np.diff(pds) <= 0)

    def test_requires_positive_lambda(self):
        with pytest.raises(DomainError):
            D.clt_approx(4, 4, 1.0, 1.0, 0.0, 1.0)
