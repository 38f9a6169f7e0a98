"""Communication-side metrics: SINR formulas, soft demapping and BER simulation."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class EffectiveChannel:
    """Per-stream effective taps seen by one UE.

    ``h`` holds one tap per transmit stream in precoder column order, the last
    entry being the dedicated sensing stream (``h_target``). ``target_coeff``
    is the raw target reflection coefficient before beamforming.
    """

    h: np.ndarray
    noise_var: float
    desired: int = 0
    target_coeff: complex = 0j

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=complex))
        object.__setattr__(self, "h", h)
        if not self.noise_var > 0:
            raise DomainError("noise_var must be positive")
        if h.size < 1:
            raise DomainError("need at least one tap")

    @property
    def h_target(self):
        return self.h[-1] if self.h.size > 1 else 0j

    def _other_ue_power(self):
        # UE streams other than the desired one; the sensing tap is last
        ue = self.h[:-1] if self.h.size > 1 else self.h
        p = np.abs(ue) ** 2
        return float(p.sum() - (p[self.desired] if self.desired < ue.size else 0.0))


def sinr_c(ch):
    """SINR with the sensing reflection treated as interference."""
    hd = abs(ch.h[ch.desired]) ** 2
    return hd / (ch._other_ue_power() + abs(ch.h_target) ** 2 + ch.noise_var)


def sinr_cs(ch, phase):
    """SINR when the reflection carries the desired symbol with relative ``phase``."""
    hd = ch.h[ch.desired]
    num = np.abs(hd + ch.h_target * np.exp(1j * np.asarray(phase, dtype=float))) ** 2
    out = num / (ch._other_ue_power() + ch.noise_var)
    return float(out) if np.ndim(out) == 0 else out


def mean_sinr_cs(ch):
    """Average of :func:`sinr_cs` over a uniformly distributed phase."""
    num = abs(ch.h[ch.desired]) ** 2 + abs(ch.h_target) ** 2
    return num / (ch._other_ue_power() + ch.noise_var)


def _bit_table(const):
    m = const.bits_per_symbol
    labels = np.asarray(const.labels)
    return ((labels[:, None] >> np.arange(m - 1, -1, -1)[None, :]) & 1).astype(bool)


def demap_llr(x_hat, noise_var, const, mode="full"):
    """Bitwise LLRs ``log P(b=0)/P(b=1)`` for equalized symbols in complex AWGN.

    ``mode="full"`` sums over all points (log-sum-exp); ``"maxlog"`` keeps the
    nearest point per hypothesis.
    """
    x_hat = np.atleast_1d(np.asarray(x_hat, dtype=complex))
    pts = np.asarray(const.points)
    bits = _bit_table(const)
    metric = -np.abs(x_hat[:, None] - pts[None, :]) ** 2 / noise_var  # (n, M)
    out = np.empty((x_hat.size, bits.shape[1]))
    for i in range(bits.shape[1]):
        m0 = np.where(~bits[:, i][None, :], metric, -np.inf)
        m1 = np.where(bits[:, i][None, :], metric, -np.inf)
        if mode == "maxlog":
            out[:, i] = m0.max(axis=1) - m1.max(axis=1)
        elif mode == "full":
            out[:, i] = np.logaddexp.reduce(m0, axis=1) - np.logaddexp.reduce(m1, axis=1)
        else:
            raise DomainError(f"unknown LLR mode {mode!r}")
    return out


def mmse_equalize_llr(y, ch, stream, const, mode="full", symbol_power=None):
    """Equalize ``y`` for ``stream`` and return per-bit LLRs.

    The scalar MMSE estimate is rescaled to be unbiased, which for a single tap
    is ``y / h``. Residual interference from the other streams plus noise is
    modeled as Gaussian with its exact variance.
    """
    h = ch.h
    p = np.ones(h.size) if symbol_power is None else np.asarray(symbol_power, float)
    hd = h[stream]
    if hd == 0:
        raise DomainError("desired tap is zero")
    interf = float(np.sum(np.abs(np.delete(h, stream)) ** 2 * np.delete(p, stream)))
    x_hat = np.asarray(y, dtype=complex) / hd
    n0 = (interf + ch.noise_var) / abs(hd) ** 2
    out = demap_llr(x_hat, n0, const, mode)
    return out[0] if np.ndim(y) == 0 else out


def hard_bits(llr):
    """Bit decisions from LLRs (positive means 0; ties decide 0)."""
    return (np.asarray(llr) < 0).astype(np.uint8)


def binomial_ci(k, n, z=1.96):
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass
class BerRow:
    mode: str
    sigma_c_target: float
    ue: int
    errors: int
    bits: int
    ci: tuple = field(default=(0.0, 1.0))

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else float("nan")


def _demap_hard(x_hat, n0, const):
    # nearest-hypothesis decisions per bit using full-sum LLRs, vectorized over n0
    pts = np.asarray(const.points)
    bits = _bit_table(const)
    metric = -np.abs(x_hat[..., None] - pts) ** 2 / n0[..., None]
    out = np.empty(x_hat.shape + (bits.shape[1],), dtype=np.uint8)
    for i in range(bits.shape[1]):
        m0 = np.logaddexp.reduce(np.where(~bits[:, i], metric, -np.inf), axis=-1)
        m1 = np.logaddexp.reduce(np.where(bits[:, i], metric, -np.inf), axis=-1)
        out[..., i] = m0 < m1
    return out


def effective_mode(sc, sigma):
    """Precoder mode in force at ``sigma``: QAMCM runs as CM below ``switch_sigma``."""
    if sc.mode == "QAMCM" and sigma < sc.switch_sigma:
        return "CM"
    return sc.mode


def ber_monte_carlo(sc, sigmas, modes=("CM", "QAM", "QAMCM"), channels=2000, threads=1):
    """Bit error rate per UE versus the target-reflection strength.

    The same channel, symbol and noise realizations are reused for every value
    in ``sigmas`` (common random numbers), so the curves differ only through
    the reflection. Each UE uses the full-sum soft demapper with residual
    interference treated as Gaussian. Returns a list of :class:`BerRow`.
    """
    from concurrent.futures import ThreadPoolExecutor

    from . import rng as rngmod
    from .system_model import draw_comm_taps, steering, synthesize_precoder

    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if sigmas.size == 0:
        raise DomainError("empty sigma grid")
    if np.any(sigmas < 0):
        raise DomainError("sigma_c_target must be nonnegative")
    consts = sc.constellation_objs()
    n_sym = int(sc.symbols)
    parts = []
    size = 250
    start = 0
    while start < channels:
        parts.append((len(parts), min(size, channels - start)))
        start += size
    precoders = {}

    def precoder(mode):
        if mode not in precoders:
            precoders[mode] = synthesize_precoder(sc.with_(mode=mode))
        return precoders[mode]

    rows = []
    for mode in modes:
        for ue in range(sc.n_ue):
            const = consts[ue]
            if const.continuous_phase:
                raise DomainError("UE streams need a discrete constellation")
            pts = np.asarray(const.points)
            labels = np.asarray(const.labels)
            m = const.bits_per_symbol

            def run(part, ue=ue, mode=mode, pts=pts, labels=labels, m=m, const=const):
                idx, n = part
                g = rngmod.stream(sc.seed, "ber", ue, idx)
                direct = np.sqrt(sc.sigma_c2 / 2) * (g.standard_normal(n) + 1j * g.standard_normal(n))
                unit = np.sqrt(0.5) * (g.standard_normal(n) + 1j * g.standard_normal(n))
                ilo, ihi = sc.interference_sector
                th = ilo + (ihi - ilo) * g.random(n)
                sym_idx = [g.integers(0, len(c.points), (n, n_sym)) if not c.continuous_phase
                           else None for c in consts]
                x = np.stack([np.asarray(c.points)[si] if si is not None
                              else np.exp(2j * np.pi * g.random((n, n_sym)))
                              for c, si in zip(consts, sym_idx)], axis=1)   # (n, S, T)
                noise = np.sqrt(sc.sigma_nc2 / 2) * (g.standard_normal((n, n_sym))
                                                     + 1j * g.standard_normal((n, n_sym)))
                tx_bits = ((labels[sym_idx[ue]][..., None] >> np.arange(m - 1, -1, -1)) & 1)
                errs = np.zeros(sigmas.size, dtype=np.int64)
                for si, s in enumerate(sigmas):
                    p = precoder(effective_mode(sc.with_(mode=mode), s))
                    taps = direct[:, None] * (steering(sc.K, sc.ue_angles[ue]) @ p.matrix)[None, :]
                    if ue == 0:
                        taps = taps + (s * unit)[:, None] * (steering(sc.K, th) @ p.matrix)
                    y = np.einsum("ns,nst->nt", taps, x) + noise
                    hd = taps[:, ue]
                    interf = np.sum(np.abs(taps) ** 2, axis=1) - np.abs(hd) ** 2
                    n0 = (interf + sc.sigma_nc2) / np.abs(hd) ** 2
                    x_hat = y / hd[:, None]
                    dec = _demap_hard(x_hat, np.broadcast_to(n0[:, None], x_hat.shape), const)
                    errs[si] = int(np.sum(dec != tx_bits))
                return errs

            if threads <= 1:
                res = [run(pt) for pt in parts]
            else:
                with ThreadPoolExecutor(max_workers=threads) as ex:
                    res = list(ex.map(run, parts))
            errs = np.sum(res, axis=0)
            bits = channels * n_sym * m
            for s, e in zip(sigmas, errs):
                rows.append(BerRow(mode, float(s), ue + 1, int(e), bits, binomial_ci(int(e), bits)))
    return rows
