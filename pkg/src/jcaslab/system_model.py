"""Physical-layer scenario: array geometry, constellations, precoders and channels.

Angles are degrees at every public interface and broadside is 0 degrees.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .comms import EffectiveChannel
from .errors import DegenerateIlluminationError, DomainError

MODES = ("CM", "QAM", "QAMCM", "MIX")


def steering(K, phi):
    """ULA response ``exp(j pi (k-1) sin phi)`` for half-wavelength spacing."""
    phi = np.asarray(phi, dtype=float)
    k = np.arange(int(K))
    out = np.exp(1j * np.pi * np.sin(np.deg2rad(phi))[..., None] * k)
    return out


# ---------------------------------------------------------------------------
# constellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constellation:
    name: str
    points: tuple
    bits_per_symbol: int
    labels: tuple
    kurtosis: float
    continuous_phase: bool = False

    def draw(self, rng, size):
        if self.continuous_phase:
            return np.exp(2j * np.pi * rng.random(size))
        idx = rng.integers(0, len(self.points), size=size)
        return np.asarray(self.points)[idx]


def _gray(n):
    return n ^ (n >> 1)


def _qam(order):
    side = int(round(math.sqrt(order)))
    if side * side != order or side < 2:
        raise DomainError(f"square QAM order required, got {order}")
    half = side.bit_length() - 1
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    pts, labels = [], []
    for i, re in enumerate(levels):
        for q, im in enumerate(levels):
            pts.append(re + 1j * im)
            labels.append((_gray(i) << half) | _gray(q))
    pts = np.asarray(pts)
    pts = pts / math.sqrt(np.mean(np.abs(pts) ** 2))
    return pts, labels


def make_constellation(kind):
    """Build a unit-power constellation.

    ``kind`` is ``"qam16"`` (or any ``"qamN"`` square order), ``"pskN"`` for N
    equally spaced unit-modulus phases, or ``"cm"`` for a constant-modulus
    signal with continuous uniform phase.
    """
    kind = kind.lower()
    if kind == "cm":
        return Constellation("cm", (1 + 0j,), 0, (0,), 1.0, continuous_phase=True)
    if kind.startswith("qam"):
        pts, labels = _qam(int(kind[3:]))
    elif kind.startswith("psk"):
        order = int(kind[3:])
        if order < 2 or order & (order - 1):
            raise DomainError("PSK order must be a power of two")
        pts = np.exp(2j * np.pi * np.arange(order) / order)
        labels = [_gray(i) for i in range(order)]
    else:
        raise DomainError(f"unknown constellation {kind!r}")
    pts = np.asarray(pts)
    m = int(round(math.log2(len(pts))))
    kurt = float(np.mean(np.abs(pts) ** 4))
    return Constellation(kind, tuple(complex(p) for p in pts), m, tuple(int(x) for x in labels), kurt)


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

def _sector(v, name):
    lo, hi = (float(x) for x in v)
    if not -90.0 < lo < hi < 90.0:
        raise DomainError(f"{name} must satisfy -90 < lo < hi < 90, got {v}")
    return (lo, hi)


@dataclass(frozen=True)
class Scenario:
    """Complete description of one experiment.

    Powers are linear. ``power_split`` lists the precoder power share of each
    UE followed by the sensing share. ``qamcm_split`` is the fraction of the
    sensing power that moves to UE1 for the interference sub-sector in QAMCM
    mode; ``mix_fraction`` is the share of the full-sector beam carried by UE1
    in MIX mode. With ``illumination="normalized"`` the beamformed gains toward
    the target are rescaled to unit total at every angle (the analysis
    convention); ``"physical"`` keeps the raw precoder gains.
    """

    K: int = 16
    N_block: int = 15
    ue_angles: tuple = (50.0, 70.0)
    sigma_s2: float = 1.0
    sigma_ns2: float = 10 ** 0.5
    sigma_nc2: float = 0.01
    sigma_c2: float = 1.0
    sigma_c_target: float = 0.0
    P_f: float = 0.01
    sensing_sector: tuple = (-20.0, 20.0)
    interference_sector: tuple = (10.0, 20.0)
    mode: str = "CM"
    constellations: tuple = ("qam16", "qam16", "cm")
    power_split: tuple = (1 / 3, 1 / 3, 1 / 3)
    qamcm_split: float = 0.25
    mix_fraction: float = 0.5
    illumination: str = "normalized"
    switch_sigma: float = 0.08
    theta_step: float = 1.0
    theta_agg: str = "mean"
    seed: int = 1
    trials: int = 100000
    draws: int = 50
    symbols: int = 200

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("ue_angles", tuple(float(a) for a in self.ue_angles))
        set_("constellations", tuple(str(c).lower() for c in self.constellations))
        set_("power_split", tuple(float(p) for p in self.power_split))
        set_("sensing_sector", _sector(self.sensing_sector, "sensing_sector"))
        set_("interference_sector", _sector(self.interference_sector, "interference_sector"))
        set_("mode", str(self.mode).upper().replace("+", ""))
        if int(self.K) != self.K or self.K < 1:
            raise DomainError("K must be a positive integer")
        if int(self.N_block) != self.N_block or self.N_block < 1:
            raise DomainError("N_block must be a positive integer")
        if not self.ue_angles:
            raise DomainError("need at least one UE")
        for a in self.ue_angles:
            if not -90 < a < 90:
                raise DomainError(f"UE angle {a} outside (-90, 90)")
        if self.sigma_s2 < 0 or self.sigma_c2 < 0 or self.sigma_c_target < 0:
            raise DomainError("powers must be nonnegative")
        if not self.sigma_ns2 > 0:
            raise DomainError("sigma_ns2 must be positive")
        if not self.sigma_nc2 > 0:
            raise DomainError("sigma_nc2 must be positive")
        if not 0 < self.P_f < 1:
            raise DomainError("P_f must lie in (0, 1)")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        n_streams = len(self.ue_angles) + 1
        if len(self.constellations) != n_streams:
            raise DomainError(f"need {n_streams} constellations (UEs then sensing)")
        if len(self.power_split) != n_streams or min(self.power_split) < 0:
            raise DomainError(f"power_split needs {n_streams} nonnegative shares")
        if sum(self.power_split) <= 0:
            raise DomainError("power_split must not be all zero")
        for name in ("qamcm_split", "mix_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in [0, 1]")
        if self.illumination not in ("normalized", "physical"):
            raise DomainError("illumination must be 'normalized' or 'physical'")
        if self.theta_agg not in ("mean", "worst"):
            raise DomainError("theta_agg must be 'mean' or 'worst'")
        if not self.theta_step > 0:
            raise DomainError("theta_step must be positive")
        for name in ("trials", "draws", "symbols"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be >= 1")
        for c in self.constellations:
            make_constellation(c)

    @property
    def n_ue(self):
        return len(self.ue_angles)

    def constellation_objs(self):
        return [make_constellation(c) for c in self.constellations]

    def kappas(self):
        return np.array([c.kurtosis for c in self.constellation_objs()])

    def theta_grid(self, sector=None):
        lo, hi = sector or self.sensing_sector
        n = int(math.floor((hi - lo) / self.theta_step + 1e-9))
        return lo + self.theta_step * np.arange(n + 1)

    def with_(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# precoder synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Precoder:
    matrix: np.ndarray
    stream_roles: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.matrix.shape[0]


def _null_project(w, K, null_angles, rel=1e-3):
    if len(null_angles) == 0:
        return w
    C = steering(K, np.asarray(null_angles))
    _, s, vh = np.linalg.svd(C, full_matrices=False)
    keep = s > rel * s[0]
    V = vh[keep].conj().T
    return w - V @ (V.conj().T @ w)


def matched_beam(K, phi, null_angles=()):
    """Unit-norm conjugate beam toward ``phi`` with optional nulls."""
    w = steering(K, phi).conj()
    w = _null_project(w, K, null_angles)
    nrm = np.linalg.norm(w)
    if nrm == 0:
        raise DomainError("null constraints remove the whole beam")
    return w / nrm


def sector_beam(K, lo, hi, null_angles=(), transition=8.0, step=0.5, suppress=(), ignore=(),
                suppress_weight=3.0):
    """Unit-norm least-squares beam with flat gain over ``[lo, hi]``.

    The desired pattern is 1 inside the sector and 0 outside a ``transition``
    band (which is left unconstrained). ``null_angles`` and the angle ranges in
    ``suppress`` get heavy weights toward zero; ranges in ``ignore`` are left
    unconstrained.
    """
    grid = np.arange(-89.5, 89.5 + step / 2, step)
    inside = (grid >= lo) & (grid <= hi)
    outside = (grid < lo - transition) | (grid > hi + transition)
    quiet = np.zeros(grid.size, dtype=bool)
    for a, b in suppress:
        quiet |= (grid >= a) & (grid <= b)
    free = np.zeros(grid.size, dtype=bool)
    for a, b in ignore:
        free |= (grid >= a) & (grid <= b)
    outside &= ~quiet & ~free
    inside &= ~quiet & ~free
    rows = [steering(K, grid[inside]), 0.1 * steering(K, grid[outside]),
            suppress_weight * steering(K, grid[quiet])]
    if len(null_angles):
        rows.append(30.0 * steering(K, np.asarray(null_angles)))
    A = np.vstack(rows)
    d = np.zeros(A.shape[0])
    d[:inside.sum()] = 1.0
    w, *_ = np.linalg.lstsq(A, d, rcond=None)
    return w / np.linalg.norm(w)


def _ripple_db(K, w, lo, hi):
    g = np.abs(steering(K, np.arange(lo, hi + 0.5, 1.0)) @ w) ** 2
    return float(10 * np.log10(g.max() / g.min())) if g.min() > 0 else math.inf


def synthesize_precoder(sc):
    """Deterministic precoder for ``sc``.

    UE columns are conjugate beams, null-steered toward the other UEs and, when
    anything else illuminates it, the sensing sector. Sector coverage comes
    from least-squares flat beams; ``sc.mode`` decides which stream carries
    which part of the sector. The result has unit total power.
    """
    K = sc.K
    n_ue = sc.n_ue
    p = np.asarray(sc.power_split, dtype=float)
    p = p / p.sum()
    p_ue, p_s = p[:-1], p[-1]
    lo, hi = sc.sensing_sector
    sector_angles = np.arange(lo, hi + 0.5, 1.0) if p_s > 0 else np.array([])
    cols = []
    for u in range(n_ue):
        others = [a for i, a in enumerate(sc.ue_angles) if i != u]
        nulls = np.concatenate([np.asarray(others, float), sector_angles])
        cols.append(math.sqrt(p_ue[u]) * matched_beam(K, sc.ue_angles[u], nulls))
    sense = np.zeros(K, dtype=complex)
    meta = {"mode": sc.mode, "warnings": []}
    ue_nulls = list(sc.ue_angles)
    if p_s > 0:
        full = sector_beam(K, lo, hi, ue_nulls)
        meta["ripple_db"] = _ripple_db(K, full, lo, hi)
        if sc.mode == "CM":
            sense = math.sqrt(p_s) * full
        elif sc.mode == "QAM":
            cols[0] = cols[0] + math.sqrt(p_s) * full
        elif sc.mode == "MIX":
            cols[0] = cols[0] + math.sqrt(p_s * sc.mix_fraction) * full
            sense = math.sqrt(p_s * (1 - sc.mix_fraction)) * full
        elif sc.mode == "QAMCM":
            ilo, ihi = sc.interference_sector
            ilo, ihi = max(ilo, lo), min(ihi, hi)
            if ihi <= ilo:
                raise DomainError("interference sector does not overlap the sensing sector")
            sub = sector_beam(K, ilo, ihi, ue_nulls)
            cols[0] = cols[0] + math.sqrt(p_s * sc.qamcm_split) * sub
            # the rest of the sector stays on the dedicated sensing stream,
            # pushed out of the sub-sector so UE1 does not see it there
            if (ilo, ihi) != (lo, hi):
                q_lo = ilo + 6.0 if ilo > lo else ilo - 8.0
                q_hi = ihi - 6.0 if ihi < hi else ihi + 8.0
                rest = sector_beam(K, lo, hi, ue_nulls, suppress=[(q_lo, q_hi)],
                                   ignore=[(ilo, ihi)])
                sense = math.sqrt(p_s * (1 - sc.qamcm_split)) * rest
                meta["rest_ripple_db"] = _ripple_db(K, rest, lo if ilo > lo else ihi,
                                                   ilo if ilo > lo else hi)
        if meta["ripple_db"] > 3.0:
            meta["warnings"].append(f"sector ripple {meta['ripple_db']:.2f} dB exceeds 3 dB")
    V = np.column_stack(cols + [sense])
    V = V / np.linalg.norm(V)
    roles = tuple(f"ue{u + 1}" for u in range(n_ue)) + ("sensing",)
    return Precoder(V, roles, meta)


def beamforming_gain(p, theta, normalized=False):
    """Per-stream gains ``|a(theta)^T v_u|^2``.

    With ``normalized=True`` returns ``(gains, gains / gains.sum())``.
    """
    g = np.abs(steering(p.K, theta) @ p.matrix) ** 2
    if not normalized:
        return g
    tot = g.sum(axis=-1, keepdims=True)
    if np.any(tot <= 1e-300):
        raise DegenerateIlluminationError(f"no stream illuminates theta={theta}")
    return g, g / tot


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensingSnapshot:
    samples: np.ndarray
    target_present: bool
    theta: float
    gains: np.ndarray
    sigma_ns2: float = 1.0


def draw_symbols(constellations, N_block, rng, batch=None):
    """Independent uniform symbols, shape ``(streams, N_block)`` or ``(batch, streams, N_block)``."""
    shape = (N_block,) if batch is None else (batch, N_block)
    rows = [c.draw(rng, shape) for c in constellations]
    return np.stack(rows, axis=-2)


def _cn(rng, shape, var=1.0):
    return math.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_blocks(sc, p, thetas, t, rng, consts=None):
    """Vectorized sensing snapshots for an array of target angles.

    Returns ``(samples, gains)`` with shapes ``(n, K, N_block)`` and
    ``(n, N_block)``.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    n = thetas.size
    K, N = sc.K, sc.N_block
    consts = consts or sc.constellation_objs()
    x = draw_symbols(consts, N, rng, batch=n)                  # (n, S, N)
    a_vec = steering(K, thetas)                                 # (n, K)
    bf = np.einsum("nk,ks->ns", a_vec, p.matrix)                # (n, S)
    if sc.illumination == "normalized":
        nrm = np.linalg.norm(bf, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise DegenerateIlluminationError("no stream illuminates the target angle")
        bf = bf / nrm
    c = np.einsum("ns,nsl->nl", bf, x)                          # (n, N)
    alpha = _cn(rng, (n, N), sc.sigma_s2)
    noise = _cn(rng, (n, K, N), sc.sigma_ns2)
    if t:
        samples = a_vec[:, :, None] * (alpha * c)[:, None, :] + noise
    else:
        samples = noise
    return samples, c


def sample_sensing_snapshot(sc, p, theta, t, rng):
    if not -90 < theta < 90:
        raise DomainError("theta must lie in (-90, 90)")
    samples, c = simulate_blocks(sc, p, [theta], t, rng)
    return SensingSnapshot(samples[0], bool(t), float(theta), c[0], sc.sigma_ns2)


def draw_comm_taps(sc, p, rng, n, ue=0, thetas=None, target=True):
    """Effective per-stream taps for ``n`` independent channel draws.

    One Rayleigh direct path toward the UE. For UE1 a target reflection
    ``h_target * a(theta)^T V`` is added with ``h_target ~ CN(0,
    sigma_c_target^2)`` and ``theta`` uniform over the interference sector.
    Returns ``(taps, target_coeff, thetas)``.
    """
    K = sc.K
    direct = _cn(rng, n, sc.sigma_c2)
    unit = _cn(rng, n, 1.0)
    if thetas is None:
        ilo, ihi = sc.interference_sector
        thetas = ilo + (ihi - ilo) * rng.random(n)
    bf_ue = steering(K, sc.ue_angles[ue]) @ p.matrix
    taps = direct[:, None] * bf_ue[None, :]
    coeff = np.zeros(n, dtype=complex)
    if ue == 0 and target:
        coeff = sc.sigma_c_target * unit
        taps = taps + coeff[:, None] * (steering(K, thetas) @ p.matrix)
    return taps, coeff, np.asarray(thetas, dtype=float)


def sample_comm_channel(sc, p, rng, ue=0, theta=None, target=True):
    taps, coeff, _ = draw_comm_taps(sc, p, rng, 1, ue,
                                    None if theta is None else np.array([theta]), target)
    return EffectiveChannel(taps[0], sc.sigma_nc2, desired=ue, target_coeff=complex(coeff[0]))
