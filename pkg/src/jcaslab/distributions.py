"""Exact and approximate laws of the power-detector statistic.

Given the per-block beamformed symbol gains, the statistic is a sum of
independent exponentials (a phase-type law). :class:`ScaleSpectrum` holds the
scales and multiplicities; :class:`SpectrumLaw` evaluates its density and
tail analytically by partial fractions over the signal scales combined with
the noise Erlang block through a confluent hypergeometric closed form.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import numerics
from .errors import DegenerateRateError, DomainError

CLUSTER_RTOL = 1e-9
MAX_CONDITION = 1e7


@dataclass(frozen=True)
class ScaleSpectrum:
    """Sum over entries of ``multiplicity`` iid exponentials with mean ``scale``."""

    entries: tuple

    def __post_init__(self):
        acc = {}
        for scale, mult in self.entries:
            scale = float(scale)
            if int(mult) != mult or mult < 1:
                raise DomainError(f"multiplicity must be a positive integer, got {mult!r}")
            if not scale > 0 or not math.isfinite(scale):
                raise DomainError(f"scale must be positive, got {scale}")
            acc[scale] = acc.get(scale, 0) + int(mult)
        if not acc:
            raise DomainError("ScaleSpectrum needs at least one entry")
        object.__setattr__(self, "entries", tuple(sorted(acc.items(), reverse=True)))

    @property
    def scales(self):
        return np.array([e[0] for e in self.entries])

    @property
    def multiplicities(self):
        return np.array([e[1] for e in self.entries])

    @property
    def total_multiplicity(self):
        return int(sum(m for _, m in self.entries))

    def log_laplace(self, s):
        """``log E[exp(-s X)]`` for complex ``s``."""
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape, dtype=complex)
        for scale, mult in self.entries:
            out -= mult * np.log1p(scale * s)
        return out

    def laplace(self, s):
        return np.exp(self.log_laplace(s))

    def mgf(self, s):
        """Moment generating function ``E[exp(s X)]``."""
        return self.laplace(-np.asarray(s, dtype=complex))

    def quadratic_form(self):
        """The same law written as a weighted sum of chi-squared(2) variables."""
        return numerics.QuadraticForm(tuple((scale / 2.0, 2 * mult)
                                            for scale, mult in self.entries))

    def sample(self, rng, size):
        out = np.zeros(size)
        for scale, mult in self.entries:
            out += rng.gamma(mult, scale, size=size)
        return out


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float


@dataclass(frozen=True)
class GaussianApprox:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DomainError("GaussianApprox needs std > 0")


def spectrum_from_gains(c_abs2, K, sigma_s2, sigma_ns2):
    """Scale spectrum of the statistic for fixed per-block gains ``|c_l|^2``.

    Each block covariance ``sigma_ns2 * I + |c_l|^2 sigma_s2 * ones(K, K)`` has
    one eigenvalue ``sigma_ns2 + K |c_l|^2 sigma_s2`` and ``K - 1`` equal to
    ``sigma_ns2``.
    """
    c_abs2 = np.atleast_1d(np.asarray(c_abs2, dtype=float))
    if c_abs2.size < 1:
        raise DomainError("need at least one block")
    if not sigma_ns2 > 0:
        raise DomainError("sigma_ns2 must be positive")
    if sigma_s2 < 0 or np.any(c_abs2 < 0):
        raise DomainError("signal power and gains must be nonnegative")
    K = int(K)
    if K < 1:
        raise DomainError("K must be >= 1")
    n_block = c_abs2.size
    entries = [(sigma_ns2, (K - 1) * n_block)] if K > 1 else []
    for c2 in c_abs2:
        entries.append((sigma_ns2 + K * c2 * sigma_s2, 1))
    return ScaleSpectrum(tuple(entries))


def moments_from_spectrum(sp):
    mean = float(sum(m * s for s, m in sp.entries))
    var = float(sum(m * s * s for s, m in sp.entries))
    return MomentSummary(mean, var)


# ---------------------------------------------------------------------------
# partial fractions
# ---------------------------------------------------------------------------

def hypoexp_coeffs(rates, rtol=CLUSTER_RTOL):
    """Coefficients ``Lambda_l = prod_{j != l} r_j / (r_j - r_l)`` for distinct rates."""
    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.size < 1 or np.any(r <= 0):
        raise DomainError("rates must be a non-empty sequence of positive reals")
    rs = np.sort(r)
    gaps = np.diff(rs) / rs[1:]
    if np.any(gaps < rtol):
        raise DegenerateRateError(
            "coincident rates: use erlang_mixture_coeffs for repeated poles")
    out = np.empty(r.size)
    for l in range(r.size):
        others = np.delete(r, l)
        out[l] = np.prod(others / (others - r[l]))
    return out


def cluster_rates(rates, mults, rtol=CLUSTER_RTOL):
    """Merge rates whose relative gap is below ``rtol`` into Erlang blocks."""
    order = np.argsort(rates)
    out_r, out_m = [], []
    for i in order:
        r, m = float(rates[i]), int(mults[i])
        if out_r and abs(r - out_r[-1]) <= rtol * max(r, out_r[-1]):
            tot = out_m[-1] + m
            out_r[-1] = (out_r[-1] * out_m[-1] + r * m) / tot
            out_m[-1] = tot
        else:
            out_r.append(r)
            out_m.append(m)
    return np.array(out_r), np.array(out_m, dtype=int)


def erlang_mixture_coeffs(rates, mults):
    """Generalized partial fractions of ``prod_k (r_k / (s + r_k))^{m_k}``.

    Returns a list ``A`` with ``A[k][j-1]`` the weight of the Erlang(j, r_k)
    density, so the hypoexponential density is
    ``sum_k sum_j A[k][j-1] * erlang_pdf(j, r_k)``. With unit multiplicities
    this reduces to :func:`hypoexp_coeffs`.
    """
    r = np.asarray(rates, dtype=float)
    m = np.asarray(mults, dtype=int)
    if np.any(np.diff(np.sort(r)) == 0):
        raise DegenerateRateError("rates must be distinct; cluster them first")
    coeffs = []
    for k in range(r.size):
        rk, mk = r[k], int(m[k])
        ro = np.delete(r, k)
        mo = np.delete(m, k)
        ratio = rk / (ro - rk)
        # normalized Taylor coefficients of log-derivative of prod (r_i/(s+r_i))^{m_i}
        g = np.array([float(np.sum(-mo * (-1.0) ** n * ratio ** (n + 1)))
                      for n in range(mk)])
        H = np.empty(mk)
        H[0] = float(np.prod((ro / (ro - rk)) ** mo))
        for n in range(mk - 1):
            H[n + 1] = np.dot(H[:n + 1], g[n::-1]) / (n + 1)
        # A_{k,j} = H_{m_k - j}
        coeffs.append(H[::-1].copy())
    return coeffs


def erlang_conv_pdf(j, a, M, b, s):
    """Density of ``Erlang(j, a) + Erlang(M, b)`` at ``s``.

    Uses ``a^j b^M s^(j+M-1) e^(-b s) 1F1(j; j+M; (b-a) s) / (j+M-1)!``
    evaluated in log space. ``j`` and ``a`` may be arrays; the result has
    shape ``broadcast(j, a) + s.shape``.
    """
    j = np.asarray(j, dtype=float)[..., None]
    a = np.asarray(a, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    z = (b - a) * ss
    lv = (j * np.log(a) + M * math.log(b) + (j + M - 1) * np.log(ss) - b * ss
          - special.gammaln(j + M) + numerics.log_hyp1f1(j, j + M, z))
    return np.where(pos, np.exp(lv), 0.0)


def signal_noise_sum_pdf(rates, M, lambda_n, s_grid, rtol=CLUSTER_RTOL):
    """Density of a hypoexponential signal term plus an Erlang(M, lambda_n) noise term.

    Term by term this is
    ``Lambda_l lambda_l lambda_n^M e^(-lambda_l s) s^M/(M (M-1)!) 1F1(M; M+1; (lambda_l - lambda_n) s)``;
    when ``lambda_l`` coincides with ``lambda_n`` the integral collapses to
    ``s^M / M``.
    """
    rates = np.asarray(rates, dtype=float)
    M = int(M)
    if M < 1:
        raise DomainError("M must be >= 1")
    if not lambda_n > 0:
        raise DomainError("lambda_n must be positive")
    lam = hypoexp_coeffs(rates, rtol)
    s = np.asarray(s_grid, dtype=float)
    if np.any(s < 0):
        raise DomainError("s_grid must be nonnegative")
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    out = np.zeros(s.shape)
    for Lam, rl in zip(lam, rates):
        alpha = rl - lambda_n
        if abs(alpha) <= rtol * lambda_n:
            log_f = np.zeros(s.shape)
        else:
            log_f = numerics.log_hyp1f1(M, M + 1, alpha * ss)
        log_mag = (math.log(abs(Lam) * rl) + M * np.log(lambda_n * ss) - rl * ss
                   - special.gammaln(M + 1) + log_f)
        out += math.copysign(1.0, Lam) * np.exp(log_mag)
    return np.where(pos, out, 0.0)


class SpectrumLaw:
    """Density, tail and CDF of a :class:`ScaleSpectrum`.

    The smallest scale (the noise eigenvalue for a detector spectrum) is kept
    as an Erlang block; all other scales form a generalized hypoexponential
    term expanded in partial fractions and convolved with that block in
    closed form. If the partial fractions are too ill-conditioned
    (``condition > max_condition``) the law falls back to numerical inversion
    of the Laplace transform and sets ``used_ilt``.
    """

    def __init__(self, sp, rtol=CLUSTER_RTOL, max_condition=MAX_CONDITION,
                 ilt_method="auto", ilt_digits=10):
        self.spectrum = sp
        self.ilt_method = ilt_method
        self.ilt_digits = ilt_digits
        rates = 1.0 / sp.scales
        mults = sp.multiplicities
        rates, mults = cluster_rates(rates, mults, rtol)
        self.clustered = len(rates) < len(sp.entries)
        # largest rate is the Erlang block
        self.base_rate = float(rates[-1])
        self.base_mult = int(mults[-1])
        self.rates = rates[:-1]
        self.mults = mults[:-1]
        self.condition = 1.0
        self.coeffs = []
        if self.rates.size:
            self.coeffs = erlang_mixture_coeffs(self.rates, self.mults)
            self.condition = float(sum(np.abs(c).sum() for c in self.coeffs))
        self.used_ilt = self.condition > max_condition

    def _pure_erlang(self):
        return not self.rates.size

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if s.ndim == 0:
            return float(self.pdf(s[None])[0])
        if self.used_ilt:
            out = np.zeros(s.shape)
            pos = s > 0
            if np.any(pos):
                out[pos] = numerics.inverse_laplace(self.spectrum.laplace, s[pos],
                                                    self.ilt_method, self.ilt_digits)
            return out
        M, b = self.base_mult, self.base_rate
        if self._pure_erlang():
            return np.where(s > 0, np.exp(M * math.log(b) + (M - 1) * np.log(np.where(s > 0, s, 1.0))
                                          - b * s - special.gammaln(M)), 0.0)
        out = np.zeros(s.shape)
        for rk, A in zip(self.rates, self.coeffs):
            j = np.arange(1, A.size + 1)
            dens = erlang_conv_pdf(j, np.full(j.size, rk), M, b, s)
            out += np.tensordot(A, dens, axes=1)
        return out

    def sf(self, x):
        """``P[X > x]``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            return float(self.sf(x[None])[0])
        if self.used_ilt:
            return 1.0 - self._ilt_cdf(x)
        M, b = self.base_mult, self.base_rate
        xx = np.maximum(x, 0.0)
        q = special.gammaincc(M, b * xx)
        if self._pure_erlang():
            return q
        total = 0.0
        out = np.zeros(x.shape)
        for rk, A in zip(self.rates, self.coeffs):
            total += A.sum()
            j = np.arange(1, A.size + 1)
            dens = erlang_conv_pdf(j, np.full(j.size, rk), M, b, xx)
            tail_w = np.cumsum(A[::-1])[::-1]  # sum_{j >= i} A_j
            out += np.tensordot(tail_w, dens, axes=1) / rk
        return np.clip(total * q + out, 0.0, 1.0)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def _ilt_cdf(self, x):
        out = np.zeros(x.shape)
        pos = x > 0
        if np.any(pos):
            F = lambda s: self.spectrum.laplace(s) / s  # noqa: E731
            out[pos] = numerics.inverse_laplace(F, x[pos], self.ilt_method, self.ilt_digits)
        return np.clip(out, 0.0, 1.0)


def support_grid(sp, n=2048, width=8.0):
    """Evaluation grid ``[max(0, mu - 8 sigma), mu + 8 sigma]``."""
    mom = moments_from_spectrum(sp)
    sd = math.sqrt(mom.variance)
    lo = max(0.0, mom.mean - width * sd)
    return np.linspace(lo, mom.mean + width * sd, n)


def spectrum_pdf(sp, s_grid, return_law=False):
    """Density of the statistic described by ``sp`` on ``s_grid``."""
    law = SpectrumLaw(sp)
    out = law.pdf(s_grid)
    return (out, law) if return_law else out


def spectrum_sf(sp, x, return_law=False):
    law = SpectrumLaw(sp)
    out = law.sf(x)
    return (out, law) if return_law else out


# ---------------------------------------------------------------------------
# kurtosis and the Gaussian approximation
# ---------------------------------------------------------------------------

def mixture_kurtosis(beta_abs, kappa):
    """Effective kurtosis ``sum_u |b_u|^2 k_u + 2 |b_u| (1 - |b_u|)`` of a beamformed mixture."""
    b = np.asarray(beta_abs, dtype=float)
    k = np.asarray(kappa, dtype=float)
    if b.shape != k.shape:
        raise DomainError("beta_abs and kappa must have equal length")
    if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-9:
        raise DomainError("allocation must be nonnegative and sum to one")
    return float(np.sum(b * b * k + 2.0 * b * (1.0 - b)))


def kappa_hessian_diag(kappa):
    return 2.0 * np.asarray(kappa, dtype=float) - 4.0


def optimal_allocation(kappa):
    """One-hot allocation on the lowest-kurtosis stream (first index on ties)."""
    k = np.asarray(kappa, dtype=float)
    if k.size < 1:
        raise DomainError("need at least one stream")
    out = np.zeros(k.size)
    out[int(np.argmin(k))] = 1.0
    return out


def clt_approx(K, N_block, sigma_s2, sigma_ns2, lam, kappa_tilde):
    """Gaussian approximation of the statistic including the mixing term."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    KN = K * N_block
    mean = KN * sigma_s2 * lam + KN * sigma_ns2
    var = (N_block * K * K * sigma_s2 ** 2 * kappa_tilde + KN * sigma_ns2 ** 2
           + 2.0 * KN * sigma_ns2 * sigma_s2 * lam)
    return GaussianApprox(float(mean), float(math.sqrt(var)))


def clt_pd(g, threshold):
    return float(1.0 - numerics.std_normal_cdf((threshold - g.mean) / g.std))
