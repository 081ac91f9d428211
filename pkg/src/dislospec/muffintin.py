"""Muffin-tin models: Dirichlet discs, cut discs, and the y-dislocation interface.

The infinite-height muffin tin reduces to Dirichlet Laplacians on the disc
components.  Full-disc eigenvalues come from Bessel-function zeros computed
by series evaluation and bisection; everything else is rasterized
finite differences with Richardson extrapolation over (h, h/2) to absorb the
first-order boundary error of the inside-nodes Dirichlet cut-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, ValidationError

RASTER_CHECK_RESOLUTION = 1.0 / 512.0


# -- Bessel zeros by series + bisection ---------------------------------------

def bessel_j(nu, x):
    """J_nu(x) for integer nu >= 0 by the alternating power series.

    Accurate in double precision for |x| up to roughly 30, which covers every
    zero needed for the eigenvalue counts used here.
    """
    x = float(x)
    if x == 0.0:
        return 1.0 if nu == 0 else 0.0
    half = 0.5 * x
    term = 1.0
    for k in range(1, nu + 1):
        term *= half / k
    total = term
    m = 0
    while True:
        m += 1
        term *= -(half * half) / (m * (m + nu))
        total += term
        if abs(term) < 1e-17 * max(abs(total), 1e-30) or m > 300:
            return total


def _bisect(f, a, b, tol=1e-12):
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa < 0) == (fb < 0):
        raise NumericalError(f"bisection bracket ({a}, {b}) does not change sign")
    for _ in range(200):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fa < 0) != (fm < 0):
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def bessel_zeros(nu, count):
    """First ``count`` positive zeros of J_nu, via scan (nu = 0) or the
    interlacing brackets from the previous order."""
    if nu == 0:
        zeros = []
        f = lambda x: bessel_j(0, x)
        x, fx = 1.0, f(1.0)
        step = 0.25
        while len(zeros) < count:
            x2 = x + step
            fx2 = f(x2)
            if (fx < 0) != (fx2 < 0):
                zeros.append(_bisect(f, x, x2))
            x, fx = x2, fx2
            if x > 200:
                raise NumericalError("Bessel zero scan ran out of range")
        return zeros
    prev = bessel_zeros(nu - 1, count + 1)
    f = lambda x: bessel_j(nu, x)
    return [_bisect(f, prev[k], prev[k + 1]) for k in range(count)]


def disc_eigenvalues(r, count):
    """First ``count`` Dirichlet eigenvalues of the disc of radius r,
    with multiplicity (orders >= 1 are double)."""
    if r <= 0:
        raise ValidationError("r: radius must be positive")
    if count < 1:
        raise ValidationError("count: must be >= 1")
    per_order = count // 2 + 2
    eigs = []
    nu = 0
    while True:
        zs = bessel_zeros(nu, per_order)
        mult = 1 if nu == 0 else 2
        lowest = (zs[0] / r) ** 2
        eigs.extend([(z / r) ** 2 for z in zs for _ in range(mult)])
        eigs.sort()
        # orders beyond this one start above the current count-th candidate
        if len(eigs) >= count and lowest > eigs[count - 1]:
            break
        nu += 1
        if nu > 60:
            raise NumericalError("disc eigenvalue order cap exceeded")
    return tuple(eigs[:count])


# -- rasterized Dirichlet solves ----------------------------------------------

def _raster(inside, x_range, y_range, h):
    """Cell-centered raster mask of ``inside`` over the bounding box."""
    x0, x1 = x_range
    y0, y1 = y_range
    nx = max(1, int(math.ceil((x1 - x0) / h)))
    ny = max(1, int(math.ceil((y1 - y0) / h)))
    xs = x0 + (np.arange(nx) + 0.5) * h
    ys = y0 + (np.arange(ny) + 0.5) * h
    return inside(xs[:, None], ys[None, :]), xs, ys


def _boundary_distance(inside, x0, y0, dx, dy, h):
    """Fraction alpha in (0, 1] such that (x0 + alpha h dx, y0 + alpha h dy)
    is the domain exit point, bisected on the inside predicate (vectorized)."""
    lo = np.zeros_like(x0)
    hi = np.ones_like(x0)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        ins = inside(x0 + mid * h * dx, y0 + mid * h * dy)
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    return np.maximum(0.5 * (lo + hi), 1e-3)


def _dirichlet_eigs(inside, x_range, y_range, h, count, phase=None, periodic_y=False):
    """Smallest Dirichlet eigenvalues of the Laplacian on the raster of
    ``inside``, with Shortley-Weller boundary-distance weights.

    ``periodic_y`` wraps the y direction (one period tall box) with Floquet
    ``phase``; wrap neighbors are matched by raster periodicity.
    """
    mask, xs, ys = _raster(inside, x_range, y_range, h)
    nx, ny = mask.shape
    nodes = np.argwhere(mask)
    n = len(nodes)
    if n < max(3, count + 2):
        raise NumericalError("raster too coarse: not enough interior nodes")
    idx = -np.ones(mask.shape, dtype=int)
    idx[mask] = np.arange(n)
    use_complex = phase is not None and abs(math.sin(phase)) > 1e-14
    dtype = complex if use_complex else float
    px = xs[nodes[:, 0]]
    py = ys[nodes[:, 1]]

    diag = np.zeros(n, dtype=float)
    rows, cols, vals = [], [], []
    # spacing fraction toward each of the four directions (1 = full cell),
    # shortened by the boundary where the neighbor leaves the domain
    alphas = {}
    neigh = {}
    for key, (di, dj) in (("xp", (1, 0)), ("xm", (-1, 0)), ("yp", (0, 1)), ("ym", (0, -1))):
        ii = nodes[:, 0] + di
        jj = nodes[:, 1] + dj
        wrap = np.zeros(n, dtype=int)
        if periodic_y and dj != 0:
            wrap = np.where(jj == ny, 1, np.where(jj == -1, -1, 0))
            jj = jj % ny
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        inside_nb = np.zeros(n, dtype=bool)
        inside_nb[ok] = mask[ii[ok], jj[ok]]
        a = np.ones(n)
        cut = ~inside_nb
        if np.any(cut):
            a[cut] = _boundary_distance(inside, px[cut], py[cut],
                                        float(di), float(dj), h)
        alphas[key] = a
        neigh[key] = (inside_nb, ii, jj, wrap)

    inv_h2 = 1.0 / (h * h)
    for axis, (km, kp) in (("x", ("xm", "xp")), ("y", ("ym", "yp"))):
        am, ap = alphas[km], alphas[kp]
        diag += 2.0 * inv_h2 / (am * ap)
        for key, afrac, aother in ((km, am, ap), (kp, ap, am)):
            inside_nb, ii, jj, wrap = neigh[key]
            w = -2.0 * inv_h2 / (afrac * (afrac + aother))
            sel = inside_nb
            r = idx[nodes[sel, 0], nodes[sel, 1]]
            c = idx[ii[sel], jj[sel]]
            wv = w[sel].astype(dtype)
            if use_complex:
                wv = wv * np.exp(1j * phase * wrap[sel])
            elif periodic_y and phase is not None:
                wv = wv * np.where(wrap[sel] != 0, math.cos(phase), 1.0)
            rows.append(r)
            cols.append(c)
            vals.append(wv)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n), dtype=dtype,
    ).tocsc() + sp.diags(diag.astype(dtype))
    k = min(count, n - 2)
    if n <= 600:
        evals = np.linalg.eigvals(A.toarray())
        return np.sort(evals.real)[:count]
    vals_out = spla.eigs(A, k=k, sigma=0.0, which="LM", return_eigenvectors=False)
    return np.sort(vals_out.real)[:count]


def _richardson_pair(inside, bbox, h, count):
    """Richardson extrapolation over (h, h/2) of the raster eigenvalues."""
    lam_h = _dirichlet_eigs(inside, bbox[0], bbox[1], h, count)
    lam_h2 = _dirichlet_eigs(inside, bbox[0], bbox[1], h / 2, count)
    m = min(len(lam_h), len(lam_h2), count)
    # boundary-weighted stencils converge at O(h^2); eliminate that term
    return tuple((4.0 * lam_h2[i] - lam_h[i]) / 3.0 for i in range(m))


# -- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class MuffinTinGeometry:
    """Disc radius and center plus the dislocation direction and parameter."""

    r: float
    x0: float = 0.0
    y0: float = 0.0
    direction: str = "y"
    t: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise ValidationError("r: radius must satisfy 0 < r < 1/2")
        if not (0.0 <= self.x0 < 1.0 and 0.0 <= self.y0 < 1.0):
            raise ValidationError("x0/y0: center must lie in [0, 1)^2")
        if self.direction not in ("x", "y"):
            raise ValidationError("direction: expected 'x' or 'y'")
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError("t: must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d, key_prefix="geometry"):
        allowed = {"r", "x0", "y0", "direction", "t"}
        for k in d:
            if k not in allowed:
                raise ValidationError(f"{key_prefix}.{k}: unknown key")
        if "r" not in d:
            raise ValidationError(f"{key_prefix}.r: missing required key")
        try:
            return cls(r=d["r"], x0=d.get("x0", 0.0), y0=d.get("y0", 0.0),
                       direction=d.get("direction", "y"), t=d.get("t", 0.0))
        except ValidationError as exc:
            raise ValidationError(f"{key_prefix}.{exc}") from None

    def to_dict(self):
        return {"r": self.r, "x0": self.x0, "y0": self.y0,
                "direction": self.direction, "t": self.t}


@dataclass(frozen=True)
class InterfaceRegion:
    connectivity: str
    components_per_period: int
    resolution: float
    raster_agrees: bool


@dataclass(frozen=True)
class CutDiscResult:
    eigenvalues: tuple
    full_disc: bool = False
    note: str = ""


@dataclass(frozen=True)
class SurfaceSpectrum:
    kind: str                   # "point" or "bands"
    eigenvalues: tuple = ()     # point case
    bands: tuple = ()           # band intervals per mode, connected case
    infinite_multiplicity: bool = False
    region: InterfaceRegion | None = None


def cut_disc_eigenvalues(r, t, count, h):
    """Dirichlet eigenvalues of B_r(1/2 - t, 0) cut to the half-plane x < 0.

    Valid for 1/2 - r < t < 1/2 + r; at t >= 1/2 + r the disc lies entirely in
    the half-plane and the full-disc spectrum is returned with a note.
    """
    if r <= 0 or count < 1 or h <= 0:
        raise ValidationError("cut_disc_eigenvalues: r, count, h must be positive")
    if t >= 0.5 + r:
        return CutDiscResult(disc_eigenvalues(r, count), full_disc=True,
                             note="cut region is the full disc")
    if t <= 0.5 - r:
        raise ValidationError("cut region B_r(1/2 - t, 0) x {x<0} is empty for t <= 1/2 - r")
    xc = 0.5 - t

    def inside(x, y):
        return ((x - xc) ** 2 + y ** 2 < r * r) & (x < 0.0)

    bbox = ((xc - r - 2 * h, min(0.0, xc + r) + 2 * h), (-r - 2 * h, r + 2 * h))
    return CutDiscResult(_richardson_pair(inside, bbox, h, count))


def _interface_intervals(r, t):
    """Diameter segments of the interface half-discs on the line x = 0,
    within one period: right halves at integer y, left halves shifted by t."""
    return ((-r, r), (t - r, t + r))


def interface_connectivity(r, t, resolution=RASTER_CHECK_RESOLUTION):
    """Classify the union of interface half-discs as connected or disconnected.

    Analytic rule from the overlap intervals on the interface line, with a
    rasterized connected-component cross-check.  Touching circles (overlap of
    measure zero) count as disconnected.
    """
    if not 0.0 < r < 0.5:
        raise ValidationError("r: radius must satisfy 0 < r < 1/2")
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t: must lie in [0, 1]")
    same = t < 2 * r           # right half at y=0 overlaps left half at y=t
    nxt = t > 1 - 2 * r        # left half at y=t overlaps right half at y=1
    connected = same and nxt
    if connected:
        comps = 1
    elif same or nxt:
        comps = 1
    else:
        comps = 2

    # raster cross-check over one period with periodic wrap in y
    hr = resolution
    def inside(x, y):
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for j in (-1.0, 0.0, 1.0, 2.0):
            out |= (x >= 0) & (x * x + (y - j) ** 2 < r * r)
            out |= (x < 0) & (x * x + (y - t - j) ** 2 < r * r)
        return out

    mask, xs, ys = _raster(inside, (-r - 2 * hr, r + 2 * hr), (0.0, 1.0), hr)
    labels, nlab = scipy.ndimage.label(mask)
    # merge labels across the periodic wrap in y
    parent = list(range(nlab + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(mask.shape[0]):
        a, b = labels[i, 0], labels[i, -1]
        if a > 0 and b > 0:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    merged = {find(l) for l in range(1, nlab + 1)}
    raster_comps = len(merged)
    raster_connected = raster_comps == 1
    agrees = raster_connected == connected
    return InterfaceRegion("connected" if connected else "disconnected",
                           1 if connected else comps, hr, agrees)


def _component_domain(r, t):
    """Inside-predicate and bbox for one bounded interface component.

    Chooses the cluster attached to the right half-disc at y = 0 when the two
    families overlap, otherwise the lone right half-disc.
    """
    same = t < 2 * r
    nxt = t > 1 - 2 * r

    if same:
        left_center = t
    elif nxt:
        left_center = t - 1.0
    else:
        left_center = None

    def inside(x, y):
        out = (x >= 0) & (x * x + y * y < r * r)
        if left_center is not None:
            out = out | ((x < 0) & (x * x + (y - left_center) ** 2 < r * r))
        return out

    ylo = min(-r, (left_center - r) if left_center is not None else -r)
    yhi = max(r, (left_center + r) if left_center is not None else r)
    return inside, ((-r - 0.05, r + 0.05), (ylo - 0.05, yhi + 0.05))


def surface_spectrum(r, t, count, h, n_phases=16):
    """Interface spectrum of the y-dislocated muffin tin.

    Disconnected case: Dirichlet eigenvalues of one bounded component per
    period, reported as point spectrum of infinite multiplicity.  Connected
    case: waveguide bands from a Floquet phase sweep along the interface
    channel (one period in y).
    """
    region = interface_connectivity(r, t)
    if region.connectivity == "disconnected":
        inside, bbox = _component_domain(r, t)
        vals = _richardson_pair(inside, bbox, h, count)
        return SurfaceSpectrum("point", eigenvalues=vals,
                               infinite_multiplicity=True, region=region)

    def inside(x, y):
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for j in (-1.0, 0.0, 1.0, 2.0):
            out = out | ((x >= 0) & (x * x + (y - j) ** 2 < r * r))
            out = out | ((x < 0) & (x * x + (y - t - j) ** 2 < r * r))
        return out

    ny = int(round(1.0 / h))
    hh = 1.0 / ny
    per_mode = [[] for _ in range(count)]
    for phase in np.linspace(0.0, 2.0 * math.pi, n_phases, endpoint=False):
        vals = _dirichlet_eigs(inside, (-r - 2 * hh, r + 2 * hh), (0.0, 1.0), hh,
                               count, phase=phase, periodic_y=True)
        for k in range(min(count, len(vals))):
            per_mode[k].append(float(vals[k]))
    bands = tuple((min(vs), max(vs)) for vs in per_mode if vs)
    return SurfaceSpectrum("bands", bands=bands, region=region)


def raster_mask(r, t, resolution=RASTER_CHECK_RESOLUTION, x_pad=0.25):
    """Raster of the interface region over one y-period, for export/plotting."""
    def inside(x, y):
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for j in (-1.0, 0.0, 1.0, 2.0):
            out |= (x >= 0) & (x * x + (y - j) ** 2 < r * r)
            out |= (x < 0) & (x * x + (y - t - j) ** 2 < r * r)
        return out

    mask, xs, ys = _raster(inside, (-r - x_pad, r + x_pad), (0.0, 1.0), resolution)
    return mask, xs, ys
