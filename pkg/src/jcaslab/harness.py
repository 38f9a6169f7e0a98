"""Scenario files, experiment commands and CSV output."""

import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__, sensing
from .comms import EffectiveChannel, ber_monte_carlo, effective_mode, mean_sinr_cs, sinr_c, sinr_cs
from .distributions import (ScaleSpectrum, SpectrumLaw, mixture_kurtosis,
                            spectrum_from_gains)
from .errors import ConfigError, DomainError
from .system_model import Scenario, beamforming_gain, synthesize_precoder

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

# section -> keys accepted in the scenario file
SCHEMA = {
    "array": ("K",),
    "sensing": ("N_block", "sigma_s2", "sigma_ns2", "P_f", "sensing_sector", "theta_step",
                "theta_agg", "illumination", "draws"),
    "comms": ("ue_angles", "sigma_nc2", "sigma_c2", "sigma_c_target", "interference_sector",
              "symbols"),
    "precoder": ("mode", "constellations", "power_split", "qamcm_split", "mix_fraction",
                 "switch_sigma"),
    "run": ("seed", "trials"),
}
DB_KEYS = {"sigma_s2", "sigma_ns2", "sigma_nc2", "sigma_c2"}


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def parse_scenario(text):
    """Build a :class:`Scenario` from TOML text.

    Power keys also accept a ``_db`` suffix (10 log10 of the linear value), and
    ``[sensing] snr_db`` sets ``sigma_s2`` relative to ``sigma_ns2``.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario parse error: {exc}") from None
    if "schema" not in doc:
        raise ConfigError("missing required key 'schema'")
    if doc.pop("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version, expected {SCHEMA_VERSION}")
    kw = {}
    snr_db = None
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, val in body.items():
            if section == "sensing" and key == "snr_db":
                snr_db = float(val)
                continue
            name = key
            if key.endswith("_db") and key[:-3] in DB_KEYS:
                name = key[:-3]
                val = 10.0 ** (float(val) / 10.0)
            if name not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            if name in kw:
                raise ConfigError(f"'{name}' given twice")
            kw[name] = tuple(val) if isinstance(val, list) else val
    if snr_db is not None:
        if "sigma_s2" in kw:
            raise ConfigError("give either snr_db or sigma_s2, not both")
        kw["sigma_s2"] = kw.get("sigma_ns2", Scenario.sigma_ns2) * 10.0 ** (snr_db / 10.0)
    try:
        return Scenario(**kw)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def load_scenario(path):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from None
    return parse_scenario(text)


def _toml_value(v):
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_scenario(sc):
    """TOML text that round-trips through :func:`parse_scenario`."""
    d = asdict(sc)
    out = [f"schema = {SCHEMA_VERSION}"]
    for section, keys in SCHEMA.items():
        out.append(f"\n[{section}]")
        out.extend(f"{k} = {_toml_value(d[k])}" for k in keys)
    return "\n".join(out) + "\n"


def scenario_hash(sc):
    blob = json.dumps(asdict(sc), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# results and CSV
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    command: str
    scenario_hash: str
    header: tuple
    rows: list
    provenance: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def data_rows_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.header)
    for r in result.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def to_csv(result):
    lines = [f"# {k}: {_fmt(v)}" for k, v in result.provenance.items()]
    lines += [f"# summary.{k}: {_fmt(v)}" for k, v in result.summary.items()]
    return "\n".join(lines) + "\n" + data_rows_text(result)


def write_csv(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{result.command}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_csv(result))
    return path


def _result(command, sc, header, rows, t0, summary=None, **extra):
    prov = {"tool": f"jcaslab {__version__}", "command": command, "scenario_hash": scenario_hash(sc),
            "schema": SCHEMA_VERSION, "seed": sc.seed, "trials": sc.trials, "draws": sc.draws}
    prov.update(extra)
    prov["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return ExperimentResult(command, prov["scenario_hash"], tuple(header), rows, prov, summary or {})


def _grid(values, name):
    g = np.atleast_1d(np.asarray(values, dtype=float))
    if g.size == 0:
        raise ConfigError(f"empty {name} grid")
    return g


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pdf(sc, threads=1, points=256, bins=48):
    """Histograms of the statistic for t=0 and t=1 with the analytic densities.

    The t=1 density is the mean of exact conditional densities over
    ``sc.draws`` gain realizations (target angles cycle over the sector grid).
    Histograms come from ``sc.trials`` Monte Carlo snapshots per hypothesis.
    """
    t0 = time.perf_counter()
    p = synthesize_precoder(sc)
    thr = sensing.threshold(sc.P_f, sc.K, sc.N_block, sc.sigma_ns2)
    theta = sc.theta_grid()
    s0 = sensing.mc_statistics(sc, p, theta, sc.trials, 0, sc.seed, threads)
    s1 = sensing.mc_statistics(sc, p, theta, sc.trials, 1, sc.seed, threads)
    noise = ScaleSpectrum(((sc.sigma_ns2, sc.K * sc.N_block),))
    # gain draws, one per realization, cycling through the angle grid
    gains = sensing.gain_draws(sc, p, theta, draws=max(1, math.ceil(sc.draws / theta.size)))
    sel = [gains[i % theta.size, i // theta.size] for i in range(sc.draws)]
    laws = [SpectrumLaw(spectrum_from_gains(g, sc.K, sc.sigma_s2, sc.sigma_ns2)) for g in sel]
    lo = min(s0.min(), s1.min())
    hi = max(s0.max(), s1.max())
    edges = np.linspace(lo, hi, bins + 1)
    grid = np.linspace(lo, hi, points)
    law0 = SpectrumLaw(noise)
    pdf0 = law0.pdf(grid)
    pdf1 = np.mean([law.pdf(grid) for law in laws], axis=0)
    mass0 = -np.diff(law0.sf(edges))
    mass1 = -np.diff(np.mean([law.sf(edges) for law in laws], axis=0))
    h0, _ = np.histogram(s0, edges)
    h1, _ = np.histogram(s1, edges)
    l1_0 = float(np.abs(h0 / s0.size - mass0).sum())
    l1_1 = float(np.abs(h1 / s1.size - mass1).sum())
    width = edges[1] - edges[0]
    b = np.clip(np.searchsorted(edges, grid, side="right") - 1, 0, bins - 1)
    rows = [(float(s), float(a), float(c), float(h0[i] / s0.size / width),
             float(h1[i] / s1.size / width), float(thr))
            for s, a, c, i in zip(grid, pdf0, pdf1, b)]
    summary = {"l1_t0": l1_0, "l1_t1": l1_1, "threshold": float(thr)}
    return _result("pdf", sc, ("s", "pdf_t0", "pdf_t1", "hist_t0", "hist_t1", "threshold"),
                   rows, t0, summary)


def cmd_roc(sc, p_f_grid, methods=sensing.METHODS, modes=("CM", "QAM"), threads=1):
    """ROC per illumination mode and method; flags whether CM dominates QAM."""
    t0 = time.perf_counter()
    p_f_grid = _grid(p_f_grid, "P_f")
    rows = []
    curves = {}
    for mode in modes:
        s = sc.with_(mode=mode)
        res = sensing.roc_curve(s, p_f_grid, methods, threads=threads)
        for m in methods:
            val, unc = res[m]
            curves[(mode, m)] = val
            rows.extend((float(pf), mode, m, float(v), float(u))
                        for pf, v, u in zip(p_f_grid, val, unc))
    summary = {}
    if "CM" in modes and "QAM" in modes:
        ref = "closed_form" if "closed_form" in methods else methods[0]
        gap = curves[("CM", ref)] - curves[("QAM", ref)]
        summary = {"cm_dominates_qam": bool(np.all(gap >= -1e-9)), "min_gap": float(gap.min()),
                   "max_gap": float(gap.max())}
    rows.sort(key=lambda r: (r[1], r[2], r[0]))
    return _result("roc", sc, ("p_f", "mode", "method", "p_d", "uncertainty"), rows, t0, summary)


SWEEPS = ("sigma_c_target", "snr", "allocation")


def _pd_at(s, methods, cache, threads):
    key = (s, tuple(methods))
    if key not in cache:
        rep = sensing.evaluate_detection(s, methods, threads=threads)
        cache[key] = rep
    return cache[key]


def cmd_pd_sweep(sc, var, grid, methods=("closed_form", "clt"), threads=1):
    """Detection probability versus target interference, SNR (dB) or stream allocation.

    ``sigma_c_target`` runs CM, QAM and QAMCM; QAMCM uses the CM precoder
    below ``switch_sigma``. ``snr`` sweeps ``sigma_s2 / sigma_ns2`` in dB for
    CM and QAM. ``allocation`` sweeps the share of the sector beam carried by
    UE1 against the dedicated CM stream.
    """
    t0 = time.perf_counter()
    if var not in SWEEPS:
        raise ConfigError(f"sweep variable must be one of {SWEEPS}")
    grid = _grid(grid, var)
    cache = {}
    rows = []
    if var == "sigma_c_target":
        for mode in ("CM", "QAM", "QAMCM"):
            for g in grid:
                s = sc.with_(mode=effective_mode(sc.with_(mode=mode), g), sigma_c_target=0.0)
                rep = _pd_at(s, methods, cache, threads)
                rows.extend((float(g), mode, m, rep.p_d[m], rep.uncertainty[m]) for m in methods)
    elif var == "snr":
        for mode in ("CM", "QAM"):
            for g in grid:
                s = sc.with_(mode=mode, sigma_s2=sc.sigma_ns2 * 10.0 ** (g / 10.0))
                rep = _pd_at(s, methods, cache, threads)
                rows.extend((float(g), mode, m, rep.p_d[m], rep.uncertainty[m]) for m in methods)
    else:
        if np.any((grid < 0) | (grid > 1)):
            raise ConfigError("allocation grid must lie in [0, 1]")
        for g in grid:
            s = sc.with_(mode="MIX", mix_fraction=float(g))
            rep = _pd_at(s, methods, cache, threads)
            rows.extend((float(g), "MIX", m, rep.p_d[m], rep.uncertainty[m]) for m in methods)
    return _result("pd-sweep", sc, (var, "mode", "method", "p_d", "uncertainty"), rows, t0,
                   sweep=var)


def cmd_ber_sweep(sc, grid, modes=("CM", "QAM", "QAMCM"), channels=2000, threads=1):
    t0 = time.perf_counter()
    grid = _grid(grid, "sigma_c_target")
    res = ber_monte_carlo(sc, grid, modes, channels=channels, threads=threads)
    rows = [(r.mode, r.sigma_c_target, r.ue, r.ber, r.ci[0], r.ci[1], r.errors, r.bits)
            for r in res]
    return _result("ber-sweep", sc, ("mode", "sigma_c_target", "ue", "ber", "ci_lo", "ci_hi",
                                     "errors", "bits"), rows, t0, channels=channels)


def cmd_beampattern(sc, angle_grid, modes=("CM", "QAM", "QAMCM")):
    t0 = time.perf_counter()
    ang = _grid(angle_grid, "angle")
    if np.any(np.abs(ang) >= 90):
        raise ConfigError("angles must lie in (-90, 90)")
    rows = []
    summary = {}
    for mode in modes:
        p = synthesize_precoder(sc.with_(mode=mode))
        g = beamforming_gain(p, ang)
        with np.errstate(divide="ignore"):
            db = 10 * np.log10(g)
        for j, role in enumerate(p.stream_roles):
            rows.extend((mode, role, float(a), float(max(v, -300.0))) for a, v in zip(ang, db[:, j]))
        summary[f"ripple_db_{mode}"] = p.metadata.get("ripple_db", float("nan"))
    return _result("beampattern", sc, ("mode", "stream", "angle_deg", "gain_db"), rows, t0, summary)


def cmd_sinr(sc, h_target_grid, h1=1.0):
    """The three SINR curves versus ``|h_target|`` with a single UE tap ``h1``."""
    t0 = time.perf_counter()
    hg = _grid(h_target_grid, "h_target")
    rows = []
    for h in hg:
        ch = EffectiveChannel(np.array([h1, h]), sc.sigma_nc2)
        db = lambda v: 10 * math.log10(v) if v > 0 else -math.inf  # noqa: E731
        rows.append((float(h), db(sinr_c(ch)), db(sinr_cs(ch, 0.0)), db(sinr_cs(ch, math.pi)),
                     db(mean_sinr_cs(ch))))
    return _result("sinr", sc, ("h_target", "sinr_c_db", "sinr_cs_max_db", "sinr_cs_min_db",
                                "sinr_cs_mean_db"), rows, t0)


def cmd_validate(sc, threads=1):
    """Cross-method invariant suite; returns a result whose rows are (check, passed, detail)."""
    t0 = time.perf_counter()
    checks = []
    rep = sensing.evaluate_detection(sc, threads=threads)
    cf, im = rep.p_d["closed_form"], rep.p_d["imhof"]
    mc, se = rep.p_d["monte_carlo"], rep.uncertainty["monte_carlo"]
    checks.append(("imhof_vs_closed_form", abs(cf - im) < 1e-6, f"{abs(cf - im):.2e}"))
    for m in ("closed_form", "imhof", "clt"):
        d = abs(rep.p_d[m] - mc)
        checks.append((f"{m}_vs_monte_carlo", d < max(0.02, 4 * se), f"{d:.4f}"))
    n = sc.trials
    sd = math.sqrt(sc.P_f * (1 - sc.P_f) / n)
    checks.append(("cfar", abs(rep.empirical_p_f - sc.P_f) <= 4 * sd,
                   f"{rep.empirical_p_f:.5f}"))
    lo = sensing.pd_clt(sc.with_(sigma_s2=sc.sigma_s2 * 0.5))
    hi = sensing.pd_clt(sc.with_(sigma_s2=sc.sigma_s2 * 2.0))
    checks.append(("monotone_in_signal_power", lo <= rep.p_d["clt"] <= hi, f"{lo:.3f}<{hi:.3f}"))
    k = sc.kappas()
    b = np.full(k.size, 1.0 / k.size)
    checks.append(("kurtosis_concavity", bool(np.all(2 * k - 4 <= 0)), f"{mixture_kurtosis(b, k):.3f}"))
    p = synthesize_precoder(sc)
    checks.append(("sector_ripple", p.metadata.get("ripple_db", 0.0) <= 3.0,
                   f"{p.metadata.get('ripple_db', 0.0):.2f} dB"))
    rows = [(name, bool(ok), detail) for name, ok, detail in checks]
    return _result("validate", sc, ("check", "passed", "detail"), rows, t0,
                   {"all_passed": all(r[1] for r in rows)})
