"""Gap eigenvalues of the 1D dislocation family.

The matching condition for a bound state at energy E and shift parameter t is
that the solution decaying at -inf (of the shifted left problem) glues C^1 to
the solution decaying at +inf.  It is implemented as a 2x2 determinant of the
two boundary vectors, whose sign changes in t are bisected to machine-level
roots.  Finite periodic approximants on (-(n+t)p, np) give integer eigenvalue
counts via matrix inertia and hence the spectral flow through a gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import eigencount
from .errors import ValidationError
from .floquet1d import band_structure, decaying_vectors, propagate
from .potential import dislocate, evaluate

# Defaults shared with the CLI artifact headers.
T_BISECT_TOL = 1e-10
MISMATCH_TOL = 1e-8
EDGE_GUARD_FACTOR = 10.0
POINTS_PER_PERIOD = 64


@dataclass(frozen=True)
class EigenBranch:
    """One traced eigenvalue branch inside gap ``gap_index``.

    Samples are (t, E) pairs ordered by energy; ``residuals[i]`` is the
    matching determinant left at the bisected root.  ``budget`` is the
    continuity allowance (in both coordinates) used during assembly.
    """

    gap_index: int
    samples: tuple
    residuals: tuple
    budget: float
    gap_lo: float
    gap_hi: float
    uncovered: tuple = ()
    others: tuple = field(default=(), repr=False)

    @property
    def t_values(self):
        return np.array([t for t, _ in self.samples])

    @property
    def e_values(self):
        return np.array([e for _, e in self.samples])

    def energy_at(self, t):
        ts = self.t_values
        if not (ts.min() <= t <= ts.max()):
            raise ValidationError(f"t = {t} outside the branch's sampled range "
                                  f"[{ts.min():.6g}, {ts.max():.6g}]")
        order = np.argsort(ts)
        return float(np.interp(t, ts[order], self.e_values[order]))


@dataclass(frozen=True)
class ApproximantSpectrum:
    n: int
    t: float
    h: float
    window: tuple
    eigenvalues: tuple


@dataclass(frozen=True)
class SpectralFlowResult:
    k: int
    e_ref: float
    n: int
    count_t0: int
    count_t1: int
    flow: int


@dataclass(frozen=True)
class BranchDistance:
    n: int
    distance: float
    flagged: bool = False


def band_structure_for_gap(V, k, tol=1e-10):
    """Band structure over a window guaranteed to start below the spectrum
    and to contain gap k."""
    emin = V.min_value() - 1.0
    emax = emin + 8.0 * (2.0 * math.pi / V.period) ** 2 + 4.0
    for _ in range(8):
        bs = band_structure(V, emin, emax, tol=tol)
        if len(bs.bands) >= k + 1:
            return bs
        emax = emin + 2.0 * (emax - emin)
    raise ValidationError(f"could not locate gap {k} below E = {emax}")


def mismatch(V, t, E):
    """Matching determinant det[[phi-(tp), phi+(0)], [phi-'(tp), phi+'(0)]].

    Zero exactly when the decaying solutions glue to an eigenfunction of the
    dislocation operator at energy E and parameter t.
    """
    if not 0.0 < t < 1.0:
        raise ValidationError("t: mismatch requires 0 < t < 1")
    v_plus, v_minus, _, _ = decaying_vectors(V, E)
    left = propagate(V, E, 0.0, t * V.period) @ v_minus
    return float(left[0] * v_plus[1] - left[1] * v_plus[0])


def _rk4_states(V, E, taus, v0, substeps, start=0.0):
    """One RK4 sweep from ``start`` through the ascending ``taus``, recording
    the propagated vector at each of them."""
    states = np.empty((len(taus), 2))
    u, w = float(v0[0]), float(v0[1])
    pos = start
    for i, tau in enumerate(taus):
        span = tau - pos
        if span > 0:
            hh = span / substeps
            xs = pos + np.arange(2 * substeps + 1) * (hh / 2.0)
            q = evaluate(V, xs) - E
            for j in range(substeps):
                qa, qm, qb = q[2 * j], q[2 * j + 1], q[2 * j + 2]
                k1u = w
                k1w = qa * u
                k2u = w + 0.5 * hh * k1w
                k2w = qm * (u + 0.5 * hh * k1u)
                k3u = w + 0.5 * hh * k2w
                k3w = qm * (u + 0.5 * hh * k2u)
                k4u = w + hh * k3w
                k4w = qb * (u + hh * k3u)
                u += (hh / 6.0) * (k1u + 2 * k2u + 2 * k3u + k4u)
                w += (hh / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
            pos = tau
        states[i] = (u, w)
    return states


def _left_states(V, E, taus, v_minus):
    """phi_- vectors at the ascending shift positions ``taus`` in [0, period]."""
    if V.form == "piecewise":
        states = np.empty((len(taus), 2))
        vec = np.array(v_minus, dtype=float)
        pos = 0.0
        for i, tau in enumerate(taus):
            if tau > pos:
                vec = propagate(V, E, pos, tau) @ vec
                pos = tau
            states[i] = vec
        return states
    sub = 3
    prev = _rk4_states(V, E, taus, v_minus, sub)
    for _ in range(5):
        cur = _rk4_states(V, E, taus, v_minus, 2 * sub)
        scale = np.maximum(1.0, np.max(np.abs(cur)))
        if np.max(np.abs(cur - prev)) <= 1e-10 * scale:
            return cur
        prev = cur
        sub *= 2
    return cur


def _mismatch_profile(V, E, t_grid, with_states=False):
    """Mismatch along a t grid from a single left-solution sweep."""
    v_plus, v_minus, _, _ = decaying_vectors(V, E)
    taus = np.asarray(t_grid, dtype=float) * V.period
    states = _left_states(V, E, taus, v_minus)
    out = states[:, 0] * v_plus[1] - states[:, 1] * v_plus[0]
    if with_states:
        return out, states, v_plus
    return out


def _short_propagate(V, E, a, b, vec, substeps=16):
    """Propagate (u, u') over the short interval [a, b]; exact for piecewise."""
    if b <= a:
        return np.asarray(vec, dtype=float)
    if V.form == "piecewise":
        return propagate(V, E, a, b) @ vec
    return _rk4_states(V, E, np.array([b]), vec, substeps, start=a)[0]


def _bisect_mismatch(V, E, t_lo, t_hi, f_lo, f_hi, tol, state_lo=None, v_plus=None):
    """Bisect a sign change of the mismatch in t; ``state_lo`` may carry the
    left solution already propagated to t_lo to avoid restarts."""
    if state_lo is None or v_plus is None:
        vp, vm, _, _ = decaying_vectors(V, E)
        state_lo = _left_states(V, E, np.array([t_lo * V.period]), vm)[0]
        v_plus = vp

    def g(t):
        vec = _short_propagate(V, E, t_lo * V.period, t * V.period, state_lo)
        return vec[0] * v_plus[1] - vec[1] * v_plus[0]

    a, b, fa = t_lo, t_hi, f_lo
    for _ in range(100):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        fm = g(m)
        if fm == 0.0:
            return m, 0.0
        if (fa < 0) != (fm < 0):
            b = m
        else:
            a, fa = m, fm
    t_root = 0.5 * (a + b)
    return t_root, abs(g(t_root))


def trace_branch(V, k, n_subintervals, e_window=None, t_resolution=1e-3,
                 t_tol=T_BISECT_TOL, bs=None):
    """Trace eigenvalue branches across gap k by scanning t for each gap energy.

    For every E on the uniform grid over ``e_window`` (default: the open gap
    shrunk by a 10*tol guard) the mismatch is scanned over t in (0, 1) at
    ``t_resolution`` and every sign change is bisected to width ``t_tol``.
    Roots are assembled into branches by nearest-neighbor continuation with
    ties broken toward smaller t; the branch with the most samples is
    returned, any remaining ones attached under ``others``.
    """
    if n_subintervals < 2:
        raise ValidationError("n_subintervals: must be >= 2")
    bs = bs or band_structure_for_gap(V, k)
    gap = bs.gap(k)
    if not gap.is_open:
        raise ValidationError(f"gap {k} is closed; no branch to trace")
    guard = EDGE_GUARD_FACTOR * bs.tol
    if e_window is None:
        e_window = (gap.lo + guard, gap.hi - guard)
    e0, e1 = e_window
    if not (gap.lo <= e0 < e1 <= gap.hi):
        raise ValidationError("e_window: must be a subinterval of the open gap")

    energies = np.linspace(e0, e1, n_subintervals + 1)
    de = energies[1] - energies[0]
    budget = 5.0 * de

    t_grid = np.arange(t_resolution, 1.0, t_resolution)
    roots_per_e = []
    uncovered = []
    for E in energies:
        prof, states, v_plus = _mismatch_profile(V, E, t_grid, with_states=True)
        roots = []
        for i in range(len(t_grid) - 1):
            if prof[i] == 0.0:
                roots.append((float(t_grid[i]), 0.0))
            elif (prof[i] < 0) != (prof[i + 1] < 0):
                t_root, res = _bisect_mismatch(V, E, t_grid[i], t_grid[i + 1],
                                               prof[i], prof[i + 1], t_tol,
                                               state_lo=states[i], v_plus=v_plus)
                roots.append((t_root, abs(res)))
        if not roots:
            uncovered.append(float(E))
        roots_per_e.append(roots)

    # nearest-neighbor continuation over the energy grid
    open_branches = []   # each: {"samples": [...], "residuals": [...], "last_t", "miss"}
    closed = []
    for E, roots in zip(energies, roots_per_e):
        taken = [False] * len(roots)
        for br in open_branches:
            best = None
            for j, (t_root, _) in enumerate(roots):
                if taken[j]:
                    continue
                dist = abs(t_root - br["last_t"])
                if dist <= budget and (best is None or dist < best[0] - 1e-15):
                    best = (dist, j)
            if best is not None:
                j = best[1]
                taken[j] = True
                br["samples"].append((roots[j][0], float(E)))
                br["residuals"].append(roots[j][1])
                br["last_t"] = roots[j][0]
                br["miss"] = 0
            else:
                br["miss"] += 1
        still_open = []
        for br in open_branches:
            (closed if br["miss"] > 2 else still_open).append(br)
        open_branches = still_open
        for j, (t_root, res) in enumerate(roots):
            if not taken[j]:
                open_branches.append({"samples": [(t_root, float(E))],
                                      "residuals": [res], "last_t": t_root, "miss": 0})
    closed.extend(open_branches)
    if not closed:
        raise ValidationError("no matching roots found anywhere on the energy grid")

    closed.sort(key=lambda b: (-len(b["samples"]), np.mean([t for t, _ in b["samples"]])))

    def to_branch(b, others=()):
        return EigenBranch(
            gap_index=k,
            samples=tuple(b["samples"]),
            residuals=tuple(b["residuals"]),
            budget=budget,
            gap_lo=gap.lo,
            gap_hi=gap.hi,
            uncovered=tuple(uncovered),
            others=others,
        )

    rest = tuple(to_branch(b) for b in closed[1:])
    return to_branch(closed[0], others=rest)


def dislocated_ring_matrix(V, n, t, h):
    """Finite-difference matrix of -d2/dx2 + W_t on (-(n+t)p, np), periodic wrap.

    Nodes sit at cell midpoints; the requested spacing ``h`` is adapted to the
    nearest integer cell count.  Returns (sparse csc matrix, actual h).
    """
    if n < 1:
        raise ValidationError("n: must be >= 1")
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t: must lie in [0, 1]")
    p = V.period
    length = (2 * n + t) * p
    m = max(3, int(round(length / h)))
    h_eff = length / m
    if p / h_eff < 16.0 - 1e-9:
        raise ValidationError(f"h too coarse: {p / h_eff:.3g} points per period (need >= 16)")
    x = -(n + t) * p + (np.arange(m) + 0.5) * h_eff
    w = dislocate(V, t, x)
    inv_h2 = 1.0 / (h_eff * h_eff)
    diag = 2.0 * inv_h2 + w
    off = -inv_h2 * np.ones(m - 1)
    A = sp.diags([off, diag, off], [-1, 0, 1], format="lil")
    A[0, m - 1] += -inv_h2
    A[m - 1, 0] += -inv_h2
    return A.tocsc(), h_eff


def approximant_eigenvalues(V, n, t, window, h=None):
    """Eigenvalues of the periodic finite-difference approximant in ``window``."""
    h = h if h is not None else V.period / POINTS_PER_PERIOD
    lo, hi = window
    if lo >= hi:
        raise ValidationError("window: lo must be below hi")
    A, h_eff = dislocated_ring_matrix(V, n, t, h)
    vals = eigencount.eigenvalues_in_window(A, lo, hi)
    return ApproximantSpectrum(n, t, h_eff, (lo, hi), tuple(float(v) for v in vals))


def count_below(V, n, t, E, h=None):
    """Number of approximant eigenvalues strictly below E, by matrix inertia."""
    h = h if h is not None else V.period / POINTS_PER_PERIOD
    A, _ = dislocated_ring_matrix(V, n, t, h)
    return eigencount.count_below(A, E)


def spectral_flow(V, k, n, E_ref, h=None, bs=None):
    """Eigenvalue count gained below E_ref in gap k as t sweeps 0 -> 1."""
    bs = bs or band_structure_for_gap(V, k)
    gap = bs.gap(k)
    if not gap.is_open:
        raise ValidationError(f"gap {k} is closed")
    guard = EDGE_GUARD_FACTOR * bs.tol
    if not gap.lo + guard <= E_ref <= gap.hi - guard:
        raise ValidationError(f"E_ref = {E_ref} not inside the open gap "
                              f"({gap.lo:.9g}, {gap.hi:.9g}) with guard")
    c0 = count_below(V, n, 0.0, E_ref, h)
    c1 = count_below(V, n, 1.0, E_ref, h)
    return SpectralFlowResult(k, E_ref, n, c0, c1, c1 - c0)


def branch_energy_refined(V, branch, t, e_tol=1e-12):
    """Branch energy at ``t``, sharpened by bisecting the mismatch in E.

    The sampled branch pins the root between its two samples adjacent in t;
    this re-solves mismatch(V, t, .) = 0 inside that energy bracket so the
    reference is exact to ``e_tol`` rather than to the interpolation error.
    A nearby second root (another branch crossing the bracket) is
    disambiguated by distance to the interpolated energy.
    """
    e0 = branch.energy_at(t)
    ts = branch.t_values
    es = branch.e_values
    order = np.argsort(ts)
    ts, es = ts[order], es[order]
    i = int(np.searchsorted(ts, t))
    lo_i = max(0, i - 1)
    hi_i = min(len(ts) - 1, i)
    pad = max(1e-6, 0.05 * abs(es[hi_i] - es[lo_i]))
    lo = max(branch.gap_lo + 1e-9, min(es[lo_i], es[hi_i]) - pad)
    hi = min(branch.gap_hi - 1e-9, max(es[lo_i], es[hi_i]) + pad)
    g = lambda e: mismatch(V, t, e)
    grid = np.linspace(lo, hi, 65)
    vals = np.array([g(e) for e in grid])
    brackets = [
        (grid[j], grid[j + 1], vals[j], vals[j + 1])
        for j in range(64)
        if (vals[j] < 0) != (vals[j + 1] < 0)
    ]
    if not brackets:
        return e0
    a, b, fa, _ = min(brackets, key=lambda br_: abs(0.5 * (br_[0] + br_[1]) - e0))
    for _ in range(100):
        if b - a <= e_tol:
            break
        mid = 0.5 * (a + b)
        fm = g(mid)
        if fm == 0.0:
            return mid
        if (fa < 0) != (fm < 0):
            b = mid
        else:
            a, fa = mid, fm
    return 0.5 * (a + b)


def branch_vs_approximant(V, branch, t, n_list, h=None):
    """Distance from the branch energy at ``t`` to the nearest approximant
    eigenvalue, Richardson-paired over (h, h/2), for each n.

    A missing approximant eigenvalue in the gap window is flagged and scored
    with the window radius.
    """
    if list(n_list) != sorted(n_list):
        raise ValidationError("n_list: must be ascending")
    h = h if h is not None else V.period / (4 * POINTS_PER_PERIOD)
    e_star = branch_energy_refined(V, branch, t)
    window = (branch.gap_lo, branch.gap_hi)
    radius = 0.5 * (window[1] - window[0])
    out = []
    for n in n_list:
        lam = []
        for hh in (h, h / 2.0):
            spec = approximant_eigenvalues(V, n, t, window, hh)
            if not spec.eigenvalues:
                lam = None
                break
            arr = np.asarray(spec.eigenvalues)
            lam.append(arr[np.argmin(np.abs(arr - e_star))])
        if lam is None:
            out.append(BranchDistance(n, radius, flagged=True))
        else:
            richardson = (4.0 * lam[1] - lam[0]) / 3.0
            out.append(BranchDistance(n, abs(richardson - e_star)))
    return out
