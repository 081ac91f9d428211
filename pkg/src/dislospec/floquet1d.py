"""Transfer-matrix engine for -u'' + (V - E) u = 0.

Provides one-period propagators (exact 2x2 blocks for piecewise-constant
potentials, step-controlled classical RK4 otherwise), the discriminant
D(E) = tr M(E), band/gap assembly from |D| = 2 crossings and tangencies,
Floquet multipliers in gaps, and the exponentially decaying solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .potential import evaluate

# Trace change per step-halving accepted by the generic integrator.
RK4_TRACE_TOL = 1e-9
# |D| must exceed 2 by this guard before gap-only operations run.
GAP_GUARD = 1e-12


@dataclass(frozen=True)
class TransferMatrix:
    """Propagator of (u, u') for -u'' + (V - E) u = 0 between two points."""

    m11: float
    m12: float
    m21: float
    m22: float

    @property
    def array(self):
        return np.array([[self.m11, self.m12], [self.m21, self.m22]])

    @property
    def trace(self):
        return self.m11 + self.m22

    @property
    def det(self):
        return self.m11 * self.m22 - self.m12 * self.m21

    def __matmul__(self, other):
        if isinstance(other, TransferMatrix):
            a, b = self.array, other.array
            c = a @ b
            return TransferMatrix(c[0, 0], c[0, 1], c[1, 0], c[1, 1])
        return self.array @ np.asarray(other)


@dataclass(frozen=True)
class Gap:
    """Open interval (lo, hi) between bands k and k+1; lo == hi marks a closed gap."""

    k: int
    lo: float
    hi: float

    @property
    def is_open(self):
        return self.hi > self.lo

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class BandStructure:
    bands: tuple
    gaps: tuple
    window: tuple
    tol: float

    def gap(self, k):
        for g in self.gaps:
            if g.k == k:
                return g
        raise ValidationError(f"gap index {k} not found in window {self.window}")

    def open_gaps(self):
        return tuple(g for g in self.gaps if g.is_open)


@dataclass(frozen=True)
class DecayingSolution:
    """A Floquet solution sampled on [0, n_periods * period], renormalized per period.

    The physical value is u(xs[i]) = u[i] * exp(log_scale[i]); the per-period
    log-scale accumulator keeps growing/decaying solutions representable.
    """

    side: str
    multiplier: float
    init_vector: tuple
    xs: np.ndarray
    u: np.ndarray
    du: np.ndarray
    log_scale: np.ndarray


def _segment_block(zeta, length):
    """Exact transfer matrix over a constant-potential segment with E - V = zeta."""
    w = np.sqrt(complex(zeta))
    wl = w * length
    if abs(wl) < 1e-8:
        s_over_w = length * (1.0 - (wl * wl) / 6.0)
    else:
        s_over_w = np.sin(wl) / w
    c = np.cos(wl)
    return c.real, s_over_w.real, (-zeta * s_over_w).real, c.real


def _segments(V, x0, x1):
    """Constant segments of a piecewise potential between x0 and x1."""
    p = V.period
    bp = list(V.breakpoints)
    k0 = math.floor((x0 - bp[0]) / p)
    segs = []
    pos = x0
    # absolute breakpoints crossing (x0, x1)
    abs_bps = []
    k = k0
    while True:
        base = k * p
        done = False
        for b in bp:
            xb = b + base
            if xb >= x1:
                done = True
                break
            if xb > x0:
                abs_bps.append(xb)
        if done or base > x1 + p:
            break
        k += 1
    for xb in abs_bps:
        segs.append((pos, xb))
        pos = xb
    if pos < x1:
        segs.append((pos, x1))
    return segs


def _propagate_piecewise(V, E, x0, x1):
    m = (1.0, 0.0, 0.0, 1.0)
    for a, b in _segments(V, x0, x1):
        v = evaluate(V, 0.5 * (a + b))
        s11, s12, s21, s22 = _segment_block(E - v, b - a)
        m = (
            s11 * m[0] + s12 * m[2],
            s11 * m[1] + s12 * m[3],
            s21 * m[0] + s22 * m[2],
            s21 * m[1] + s22 * m[3],
        )
    return m


def _rk4_pass(q, h, nsteps):
    """RK4 for T' = [[0,1],[q,0]] T over nsteps; q sampled at half-step resolution.

    ``q`` has shape (2*nsteps + 1, nE); returns four (nE,) arrays.
    """
    ne = q.shape[1]
    t11 = np.ones(ne)
    t12 = np.zeros(ne)
    t21 = np.zeros(ne)
    t22 = np.ones(ne)
    for i in range(nsteps):
        qa = q[2 * i]
        qm = q[2 * i + 1]
        qb = q[2 * i + 2]
        for tu, tv in ((t11, t21), (t12, t22)):
            # k = (u', v') with u' = v, v' = q u
            k1u = tv
            k1v = qa * tu
            k2u = tv + 0.5 * h * k1v
            k2v = qm * (tu + 0.5 * h * k1u)
            k3u = tv + 0.5 * h * k2v
            k3v = qm * (tu + 0.5 * h * k2u)
            k4u = tv + h * k3v
            k4v = qb * (tu + h * k3u)
            tu += (h / 6.0) * (k1u + 2 * k2u + 2 * k3u + k4u)
            tv += (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return t11, t12, t21, t22


def _propagate_generic_grid(V, E_arr, x0, x1):
    """Vectorized-over-E RK4 with Richardson step control on the trace."""
    E_arr = np.atleast_1d(np.asarray(E_arr, dtype=float))
    span = x1 - x0
    if span == 0:
        one = np.ones_like(E_arr)
        zero = np.zeros_like(E_arr)
        return one, zero, zero, one.copy()
    nsteps = max(32, int(math.ceil(span / V.period * 256)))
    prev = None
    for _ in range(8):
        xs = x0 + np.arange(2 * nsteps + 1) * (span / (2 * nsteps))
        vv = evaluate(V, xs)
        q = vv[:, None] - E_arr[None, :]
        cur = _rk4_pass(q, span / nsteps, nsteps)
        if prev is not None:
            tr_prev = prev[0] + prev[3]
            tr_cur = cur[0] + cur[3]
            if np.max(np.abs(tr_cur - tr_prev) / np.maximum(1.0, np.abs(tr_cur))) < RK4_TRACE_TOL:
                break
        prev = cur
        nsteps *= 2
    t11, t12, t21, t22 = cur
    # restore the Wronskian exactly; the drift is within integration error
    d = np.sqrt(t11 * t22 - t12 * t21)
    return t11 / d, t12 / d, t21 / d, t22 / d


def propagate(V, E, x0, x1):
    """Transfer matrix mapping (u(x0), u'(x0)) to (u(x1), u'(x1))."""
    if x0 > x1:
        raise ValidationError("propagate: x0 must not exceed x1")
    if V.form == "piecewise":
        m = _propagate_piecewise(V, float(E), x0, x1)
        return TransferMatrix(*m)
    t11, t12, t21, t22 = _propagate_generic_grid(V, [E], x0, x1)
    return TransferMatrix(float(t11[0]), float(t12[0]), float(t21[0]), float(t22[0]))


def discriminant(V, E):
    """D(E) = trace of the one-period propagator; accepts scalar or array E."""
    scalar = np.isscalar(E) or np.ndim(E) == 0
    if V.form == "piecewise":
        es = np.atleast_1d(np.asarray(E, dtype=float))
        out = np.array([sum(_propagate_piecewise(V, e, 0.0, V.period)[i] for i in (0, 3)) for e in es])
    else:
        t11, _, _, t22 = _propagate_generic_grid(V, E, 0.0, V.period)
        out = t11 + t22
    return float(out[0]) if scalar else out


def _bisect_scalar(f, a, b, fa, fb, tol):
    for _ in range(200):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fa < 0) != (fm < 0):
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _refine_extremum(f, a, b, maximize):
    """Golden-section refinement of an interior extremum of f on [a, b]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    sgn = 1.0 if maximize else -1.0
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = sgn * f(x1), sgn * f(x2)
    for _ in range(80):
        if b - a < 1e-13 * max(1.0, abs(a) + abs(b)):
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = sgn * f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = sgn * f(x1)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def band_structure(V, Emin, Emax, tol=1e-10):
    """Bands and gaps of the periodic operator inside [Emin, Emax].

    Scans D(E) on a grid of at least 256 panels per unit energy, brackets the
    |D| = 2 crossings, bisects each to width ``tol``, and resolves tangencies
    (closed gaps) by local extremum refinement.  For absolute gap indices the
    window should start below the bottom of the spectrum.
    """
    if Emin >= Emax:
        raise ValidationError("band_structure: Emin must be below Emax")
    if tol <= 0:
        raise ValidationError("band_structure: tol must be positive")
    npanels = max(512, int(256 * (Emax - Emin)))
    grid = np.linspace(Emin, Emax, npanels + 1)
    dvals = discriminant(V, grid)
    f = lambda e: discriminant(V, e)

    edges = []       # crossing energies
    tangents = []    # closed-gap energies

    def scan(grid, dvals, depth):
        for target in (2.0, -2.0):
            g = dvals - target
            for i in range(len(grid) - 1):
                if g[i] == 0.0:
                    edges.append(float(grid[i]))
                elif (g[i] < 0) != (g[i + 1] < 0):
                    edges.append(
                        _bisect_scalar(lambda e: f(e) - target, grid[i], grid[i + 1], g[i], g[i + 1], tol)
                    )
        # interior extrema of D that approach |D| = 2 without a bracketed crossing
        for i in range(1, len(grid) - 1):
            is_max = dvals[i] >= dvals[i - 1] and dvals[i] >= dvals[i + 1]
            is_min = dvals[i] <= dvals[i - 1] and dvals[i] <= dvals[i + 1]
            if not (is_max or is_min):
                continue
            target = 2.0 if is_max else -2.0
            if abs(dvals[i] - target) > 1e-3:
                continue
            if (dvals[i - 1] - target) * (dvals[i] - target) < 0 or (dvals[i] - target) * (dvals[i + 1] - target) < 0:
                continue  # already handled as a crossing
            e_ext, d_ext = _refine_extremum(f, grid[i - 1], grid[i + 1], maximize=is_max)
            gap_excess = abs(d_ext) - 2.0
            if abs(gap_excess) <= max(10 * tol, 1e-9):
                tangents.append(e_ext)
            elif gap_excess > 0 and depth < 2:
                sub = np.linspace(grid[i - 1], grid[i + 1], 257)
                scan(sub, discriminant(V, sub), depth + 1)

    scan(grid, dvals, 0)

    events = sorted([(e, "x") for e in edges] + [(e, "t") for e in tangents])
    dedup = []
    for e, kind in events:
        if dedup and abs(e - dedup[-1][0]) <= max(tol, 1e-12 * max(1.0, abs(e))) and dedup[-1][1] == kind:
            continue
        dedup.append((e, kind))
    events = dedup

    # classify the segments between consecutive events by the midpoint of D
    pts = [Emin] + [e for e, _ in events] + [Emax]
    kinds = [None] + [k for _, k in events] + [None]
    seg_band = []
    for i in range(len(pts) - 1):
        mid = 0.5 * (pts[i] + pts[i + 1])
        seg_band.append(abs(f(mid)) <= 2.0 if pts[i + 1] > pts[i] else True)

    # maximal band runs, split where a tangency separates two band segments
    bands = []
    cur_lo = None
    for i, in_band in enumerate(seg_band):
        lo, hi = pts[i], pts[i + 1]
        if in_band:
            if cur_lo is None:
                cur_lo = lo
            split = i + 1 < len(seg_band) and seg_band[i + 1] and kinds[i + 1] == "t"
            if split:
                bands.append((cur_lo, hi))
                cur_lo = hi
        else:
            if cur_lo is not None:
                bands.append((cur_lo, lo))
                cur_lo = None
    if cur_lo is not None:
        bands.append((cur_lo, Emax))

    gap_objs = tuple(
        Gap(k + 1, b1[1], b2[0]) for k, (b1, b2) in enumerate(zip(bands, bands[1:]))
    )
    return BandStructure(tuple(bands), gap_objs, (Emin, Emax), tol)


def floquet_multipliers(V, E, guard=GAP_GUARD):
    """The two real monodromy eigenvalues at a gap energy, ordered |rho-| < 1 < |rho+|."""
    d = discriminant(V, E)
    if abs(d) <= 2.0 + guard:
        raise ValidationError(f"floquet_multipliers: |D(E)| = {abs(d):.6g} <= 2, E not in a gap")
    big = 0.5 * (d + math.copysign(math.sqrt(d * d - 4.0), d))
    return 1.0 / big, big


def _monodromy_eigenvector(T, rho):
    """Stable eigenvector of the one-period propagator, unit norm, sign-fixed."""
    v1 = np.array([T.m12, rho - T.m11])
    v2 = np.array([rho - T.m22, T.m21])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise NumericalError("monodromy eigenvector degenerate")
    v = v / nrm
    if abs(v[0]) > 1e-12:
        v = v * math.copysign(1.0, v[0])
    else:
        v = v * math.copysign(1.0, v[1])
    return v


def decaying_vectors(V, E):
    """Initial (u, u') vectors of the solutions decaying at +inf and at -inf."""
    T = propagate(V, E, 0.0, V.period)
    rho_small, rho_big = floquet_multipliers(V, E)
    v_plus = _monodromy_eigenvector(T, rho_small)
    v_minus = _monodromy_eigenvector(T, rho_big)
    return v_plus, v_minus, rho_small, rho_big


def decaying_solution(V, E, side, n_periods, points_per_period=64):
    """Sample the Floquet solution decaying at +inf (side='right') or -inf ('left').

    Both are propagated rightward from x = 0 over ``n_periods`` periods with
    per-period renormalization; the left solution grows to the right (it
    decays leftward) and the accumulated scale is kept in ``log_scale``.
    """
    if side not in ("left", "right"):
        raise ValidationError("side: expected 'left' or 'right'")
    if n_periods < 1:
        raise ValidationError("n_periods: must be >= 1")
    v_plus, v_minus, rho_small, rho_big = decaying_vectors(V, E)
    v0 = v_plus if side == "right" else v_minus
    rho = rho_small if side == "right" else rho_big

    p = V.period
    npp = points_per_period
    xs = np.arange(n_periods * npp + 1) * (p / npp)
    u = np.empty_like(xs)
    du = np.empty_like(xs)
    log_scale = np.empty_like(xs)

    # transfer matrices across one period's sample cells (shared by all periods)
    cell_mats = [propagate(V, E, i * p / npp, (i + 1) * p / npp) for i in range(npp)]

    w = np.array(v0, dtype=float)
    ls = 0.0
    for k in range(n_periods):
        vec = w.copy()
        for i in range(npp):
            j = k * npp + i
            u[j], du[j] = vec
            log_scale[j] = ls
            vec = cell_mats[i].array @ vec
        w = vec
        nrm = np.linalg.norm(w)
        if nrm == 0 or not np.isfinite(nrm):
            raise NumericalError("decaying solution lost normalization")
        ls += math.log(nrm)
        w = w / nrm
    u[-1], du[-1] = w  # stored normalized; physical scale via log_scale
    log_scale[-1] = ls
    return DecayingSolution(side, rho, (float(v0[0]), float(v0[1])), xs, u, du, log_scale)
