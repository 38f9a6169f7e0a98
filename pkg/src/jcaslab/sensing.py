"""Energy detection of a Swerling-1 target illuminated by the communication beams.

The detector sums ``|z|^2`` over all antennas and blocks and compares it with a
CFAR threshold set from the noise-only chi-squared law. Detection probability
is available by Monte Carlo, by the Imhof integral, by the closed-form
phase-type law and by a Gaussian approximation.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics, rng as rngmod
from .comms import binomial_ci
from .distributions import (SpectrumLaw, clt_approx, clt_pd, mixture_kurtosis,
                            spectrum_from_gains)
from .errors import DomainError
from .system_model import beamforming_gain, simulate_blocks, synthesize_precoder

CHUNK = 2000
METHODS = ("closed_form", "imhof", "clt", "monte_carlo")


def threshold(P_f, K, N_block, sigma_ns2):
    """CFAR threshold ``sigma_ns2 / 2 * chi2_{2KN}^{-1}(1 - P_f)``."""
    if not 0 < P_f < 1:
        raise DomainError("P_f must lie in (0, 1)")
    if not sigma_ns2 > 0:
        raise DomainError("sigma_ns2 must be positive")
    return 0.5 * sigma_ns2 * numerics.chi2_quantile(2 * int(K) * int(N_block), 1.0 - P_f)


def detector_statistic(snapshot):
    """Total received energy ``sum |z_kl|^2`` of a snapshot (or sample array)."""
    z = getattr(snapshot, "samples", snapshot)
    return float(np.sum(np.abs(z) ** 2))


def decide(statistic, thr):
    """Declare a target when the statistic strictly exceeds the threshold."""
    return statistic > thr


def aggregate(values, how):
    values = np.asarray(values, dtype=float)
    if how == "mean":
        return float(values.mean())
    if how == "worst":
        return float(values.min())
    raise DomainError(f"unknown aggregation {how!r}")


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def mc_statistics(sc, p, theta_grid, trials, t, seed, threads=1, label="mc"):
    """Detector statistics for ``trials`` snapshots.

    Trial ``i`` uses ``theta_grid[i % len(theta_grid)]``. Trials are split in
    fixed chunks, each with its own counter-based stream, so the result does
    not depend on ``threads``.
    """
    theta_grid = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    consts = sc.constellation_objs()
    out = np.empty(trials)

    def run(chunk):
        idx, n = chunk
        start = idx * CHUNK
        th = theta_grid[(start + np.arange(n)) % theta_grid.size]
        g = rngmod.stream(seed, label, int(t), idx)
        z, _ = simulate_blocks(sc, p, th, t, g, consts)
        out[start:start + n] = np.sum(np.abs(z) ** 2, axis=(1, 2))

    parts = rngmod.chunks(trials, CHUNK)
    if threads <= 1:
        for c in parts:
            run(c)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, parts))
    return out


def pd_monte_carlo(sc, precoder=None, theta_grid=None, trials=None, threads=1, thresholds=None):
    """Monte Carlo detection and false-alarm rates.

    Returns a dict with ``p_d``, its standard error, the empirical ``p_f``
    with a 95% interval and the per-angle detection rates.
    """
    p = precoder or synthesize_precoder(sc)
    theta_grid = sc.theta_grid() if theta_grid is None else np.atleast_1d(theta_grid)
    trials = int(trials or sc.trials)
    thr = np.atleast_1d(threshold(sc.P_f, sc.K, sc.N_block, sc.sigma_ns2)
                        if thresholds is None else thresholds)
    s1 = mc_statistics(sc, p, theta_grid, trials, 1, sc.seed, threads)
    s0 = mc_statistics(sc, p, theta_grid, trials, 0, sc.seed, threads)
    det = s1[:, None] > thr[None, :]
    fa = s0[:, None] > thr[None, :]
    tidx = np.arange(trials) % theta_grid.size
    per_theta = np.stack([det[tidx == i].mean(axis=0) for i in range(theta_grid.size)])
    pd = np.array([aggregate(per_theta[:, j], sc.theta_agg) for j in range(thr.size)])
    k_fa = fa.sum(axis=0)
    res = {
        "p_d": pd,
        "se": np.sqrt(pd * (1 - pd) / trials),
        "p_f": k_fa / trials,
        "p_f_ci": [binomial_ci(int(k), trials) for k in k_fa],
        "per_theta": per_theta,
        "trials": trials,
    }
    if thresholds is None:
        res = {k: (v[0] if isinstance(v, (np.ndarray, list)) and k != "per_theta" else v)
               for k, v in res.items()}
        res["per_theta"] = per_theta[:, 0]
    return res


# ---------------------------------------------------------------------------
# analytic routes, conditioned on beamformed gains
# ---------------------------------------------------------------------------

def gain_draws(sc, p=None, theta_grid=None, draws=None, seed=None):
    """``|c_l|^2`` realizations, shape ``(len(theta_grid), draws, N_block)``."""
    p = p or synthesize_precoder(sc)
    theta_grid = sc.theta_grid() if theta_grid is None else np.atleast_1d(theta_grid)
    draws = int(draws or sc.draws)
    seed = sc.seed if seed is None else seed
    consts = sc.constellation_objs()
    out = np.empty((theta_grid.size, draws, sc.N_block))
    for i, th in enumerate(theta_grid):
        g = rngmod.stream(seed, "gains", i)
        _, c = simulate_blocks(sc, p, np.full(draws, th), 1, g, consts)
        out[i] = np.abs(c) ** 2
    return out


def _as_gain_array(c_draws):
    c = np.asarray(c_draws)
    if np.iscomplexobj(c):
        c = np.abs(c) ** 2
    c = c.astype(float)
    if c.ndim == 1:
        c = c[None, None, :]
    elif c.ndim == 2:
        c = c[None]
    if c.ndim != 3:
        raise DomainError("gain draws must have shape (draws, N) or (thetas, draws, N)")
    return c


def _conditional_pd(sc, gains, method, thr, tol):
    sp = spectrum_from_gains(gains, sc.K, sc.sigma_s2, sc.sigma_ns2)
    if method == "closed_form":
        law = SpectrumLaw(sp)
        return law.sf(thr), int(law.used_ilt), law.condition
    if method == "imhof":
        q = sp.quadratic_form()
        return np.array([numerics.imhof_tail(q, x, tol) for x in thr]), 0, 1.0
    raise DomainError(f"unknown method {method!r}")


def pd_per_draw(sc, c_draws, method="closed_form", thresholds=None, tol=1e-10, threads=1):
    """Conditional detection probability for each gain realization.

    Returns ``(pd, info)`` where ``pd`` has shape ``(thetas, draws, len(thresholds))``
    and ``info`` counts draws that needed the numerical-inversion fallback.
    """
    c = _as_gain_array(c_draws)
    thr = np.atleast_1d(threshold(sc.P_f, sc.K, sc.N_block, sc.sigma_ns2)
                        if thresholds is None else thresholds).astype(float)
    if method not in ("closed_form", "imhof"):
        raise DomainError(f"unknown method {method!r}")
    out = np.empty(c.shape[:2] + (thr.size,))
    flat = c.reshape(-1, c.shape[2])

    def run(i):
        return _conditional_pd(sc, flat[i], method, thr, tol)

    if threads <= 1:
        res = [run(i) for i in range(flat.shape[0])]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(run, range(flat.shape[0])))
    out[:] = np.array([r[0] for r in res]).reshape(out.shape)
    info = {"ilt_fallbacks": sum(r[1] for r in res),
            "max_condition": max([1.0] + [r[2] for r in res])}
    return out, info


def _summarize(per_draw, how):
    # per_draw: (thetas, draws, thresholds)
    per_theta = per_draw.mean(axis=1)
    n = per_draw.shape[1]
    se_theta = per_draw.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(per_theta)
    if how == "mean":
        value = per_theta.mean(axis=0)
        se = np.sqrt(np.sum(se_theta ** 2, axis=0)) / per_theta.shape[0]
    else:
        arg = per_theta.argmin(axis=0)
        value = per_theta[arg, np.arange(per_theta.shape[1])]
        se = se_theta[arg, np.arange(per_theta.shape[1])]
    return value, se, per_theta


def pd_imhof(sc, c_draws, tol=1e-10):
    """Average detection probability over gain draws via the Imhof integral."""
    pdd, _ = pd_per_draw(sc, c_draws, "imhof", tol=tol)
    return float(_summarize(pdd, sc.theta_agg)[0][0])


def pd_closed_form(sc, c_draws, return_info=False):
    """Average detection probability over gain draws via the closed-form law."""
    pdd, info = pd_per_draw(sc, c_draws, "closed_form")
    val, se, _ = _summarize(pdd, sc.theta_agg)
    if return_info:
        info = dict(info, se=float(se[0]))
        return float(val[0]), info
    return float(val[0])


def clt_params(sc, p, theta):
    """``(effective signal power, kurtosis)`` of the illuminating mixture at ``theta``."""
    g, b = beamforming_gain(p, theta, normalized=True)
    lam = 1.0 if sc.illumination == "normalized" else float(g.sum())
    return sc.sigma_s2 * lam, mixture_kurtosis(b, sc.kappas())


def pd_clt(sc, precoder=None, theta_grid=None, thresholds=None):
    """Gaussian-approximation detection probability averaged (or minimized) over angle."""
    p = precoder or synthesize_precoder(sc)
    theta_grid = sc.theta_grid() if theta_grid is None else np.atleast_1d(theta_grid)
    scalar = thresholds is None
    thr = np.atleast_1d(threshold(sc.P_f, sc.K, sc.N_block, sc.sigma_ns2)
                        if scalar else thresholds)
    per = np.empty((theta_grid.size, thr.size))
    for i, th in enumerate(theta_grid):
        s2, kt = clt_params(sc, p, th)
        g = clt_approx(sc.K, sc.N_block, s2, sc.sigma_ns2, 1.0, kt)
        per[i] = [clt_pd(g, x) for x in thr]
    vals = np.array([aggregate(per[:, j], sc.theta_agg) for j in range(thr.size)])
    return float(vals[0]) if scalar else vals


@dataclass
class DetectionReport:
    p_f_target: float
    threshold: float
    p_d: dict
    uncertainty: dict
    empirical_p_f: float = float("nan")
    empirical_p_f_ci: tuple = (float("nan"), float("nan"))
    metadata: dict = field(default_factory=dict)


def evaluate_detection(sc, methods=METHODS, precoder=None, threads=1):
    """Detection probability at ``sc.P_f`` by each requested method."""
    p = precoder or synthesize_precoder(sc)
    thr = threshold(sc.P_f, sc.K, sc.N_block, sc.sigma_ns2)
    rep = DetectionReport(sc.P_f, thr, {}, {}, metadata={"mode": sc.mode})
    c = None
    for m in methods:
        if m in ("closed_form", "imhof"):
            if c is None:
                c = gain_draws(sc, p)
            pdd, info = pd_per_draw(sc, c, m, threads=threads)
            val, se, _ = _summarize(pdd, sc.theta_agg)
            rep.p_d[m], rep.uncertainty[m] = float(val[0]), float(se[0])
            if m == "closed_form":
                rep.metadata["ilt_fallbacks"] = info["ilt_fallbacks"]
        elif m == "clt":
            rep.p_d[m], rep.uncertainty[m] = pd_clt(sc, p), 0.0
        elif m == "monte_carlo":
            r = pd_monte_carlo(sc, p, threads=threads)
            rep.p_d[m], rep.uncertainty[m] = float(r["p_d"]), float(r["se"])
            rep.empirical_p_f, rep.empirical_p_f_ci = float(r["p_f"]), r["p_f_ci"]
        else:
            raise DomainError(f"unknown method {m!r}")
    return rep


def roc_curve(sc, p_f_grid, methods=METHODS, precoder=None, threads=1):
    """Detection probability for each false-alarm level in ``p_f_grid``.

    Returns a dict ``method -> (p_d array, uncertainty array)``.
    """
    p_f_grid = np.atleast_1d(np.asarray(p_f_grid, dtype=float))
    if p_f_grid.size == 0:
        raise DomainError("empty P_f grid")
    p = precoder or synthesize_precoder(sc)
    thr = np.array([threshold(pf, sc.K, sc.N_block, sc.sigma_ns2) for pf in p_f_grid])
    out = {}
    c = None
    for m in methods:
        if m in ("closed_form", "imhof"):
            if c is None:
                c = gain_draws(sc, p)
            pdd, _ = pd_per_draw(sc, c, m, thresholds=thr, threads=threads)
            val, se, _ = _summarize(pdd, sc.theta_agg)
            out[m] = (val, se)
        elif m == "clt":
            out[m] = (pd_clt(sc, p, thresholds=thr), np.zeros(thr.size))
        elif m == "monte_carlo":
            r = pd_monte_carlo(sc, p, threads=threads, thresholds=thr)
            out[m] = (r["p_d"], r["se"])
        else:
            raise DomainError(f"unknown method {m!r}")
    return out
