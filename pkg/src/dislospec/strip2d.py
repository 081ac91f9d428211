"""Discretized dislocation operators on the strip and on Dirichlet squares.

The strip (-(n+t), n) x (0, 1) carries periodic wrap in x and phase-twisted
periodic wrap in y; squares (-n, n)^2 carry Dirichlet boundaries.  Gap
eigenvalues, interface localization, inertia-based eigenvalue counts and
surface/bulk density-of-states quotients are built on the shared 5-point
finite-difference assembly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import eigencount
from .errors import ValidationError
from .potential import PotentialSpec, evaluate

MIN_POINTS_PER_UNIT = 16

KINDS_2D = ("separable", "fourier2d", "sampled2d")


@dataclass(frozen=True)
class Potential2D:
    """A Z^2-periodic potential on the unit cell [0,1)^2.

    ``separable``: v(x) + w(y) from two period-1 1D specs.
    ``fourier2d``: sum of a*cos(2 pi (kx x + ky y)) + b*sin(...) terms,
    each term a tuple (kx, ky, a, b).
    ``sampled2d``: bilinear interpolation of an nx-by-ny value grid.
    """

    kind: str
    vx: PotentialSpec | None = None
    wy: PotentialSpec | None = None
    terms: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS_2D:
            raise ValidationError(f"kind: expected one of {KINDS_2D}, got {self.kind!r}")
        if self.kind == "separable":
            if self.vx is None or self.wy is None:
                raise ValidationError("separable potential requires vx and wy")
            for name, spec in (("vx", self.vx), ("wy", self.wy)):
                if abs(spec.period - 1.0) > 1e-12:
                    raise ValidationError(f"{name}: separable factors must have period 1")
        elif self.kind == "fourier2d":
            if not self.terms:
                raise ValidationError("fourier2d potential requires at least one term")
            terms = tuple((int(kx), int(ky), float(a), float(b)) for kx, ky, a, b in self.terms)
            object.__setattr__(self, "terms", terms)
        else:
            vals = tuple(tuple(float(v) for v in row) for row in self.values)
            if len(vals) < 2 or any(len(r) != len(vals[0]) for r in vals) or len(vals[0]) < 2:
                raise ValidationError("sampled2d potential requires a rectangular grid, >= 2 per side")
            object.__setattr__(self, "values", vals)
            arr = np.asarray(vals)
            nx, ny = arr.shape
            sx = np.max(np.abs(np.roll(arr, -1, 0) - arr)) * nx
            sy = np.max(np.abs(np.roll(arr, -1, 1) - arr)) * ny
            if max(sx, sy) > 1e4:
                warnings.warn("sampled2d potential has a very steep finite-difference slope; "
                              "the Lipschitz hypothesis may be violated", stacklevel=2)

    @classmethod
    def separable(cls, vx, wy):
        return cls(kind="separable", vx=vx, wy=wy)

    @classmethod
    def fourier(cls, terms):
        return cls(kind="fourier2d", terms=tuple(terms))

    @classmethod
    def sampled(cls, values):
        return cls(kind="sampled2d", values=tuple(tuple(r) for r in values))

    @classmethod
    def from_dict(cls, d, key_prefix="potential2d"):
        if not isinstance(d, dict):
            raise ValidationError(f"{key_prefix}: expected an object")
        kind = d.get("kind")
        if kind is None:
            raise ValidationError(f"{key_prefix}.kind: missing required key")
        allowed = {
            "separable": {"kind", "vx", "wy"},
            "fourier2d": {"kind", "terms"},
            "sampled2d": {"kind", "values"},
        }.get(kind)
        if allowed is None:
            raise ValidationError(f"{key_prefix}.kind: expected one of {KINDS_2D}")
        for k in d:
            if k not in allowed:
                raise ValidationError(f"{key_prefix}.{k}: unknown key")
        if kind == "separable":
            return cls.separable(
                PotentialSpec.from_dict(d.get("vx", {}), f"{key_prefix}.vx"),
                PotentialSpec.from_dict(d.get("wy", {}), f"{key_prefix}.wy"),
            )
        if kind == "fourier2d":
            return cls.fourier(tuple(tuple(t) for t in d.get("terms", ())))
        return cls.sampled(d.get("values", ()))

    def to_dict(self):
        if self.kind == "separable":
            return {"kind": "separable", "vx": self.vx.to_dict(), "wy": self.wy.to_dict()}
        if self.kind == "fourier2d":
            return {"kind": "fourier2d", "terms": [list(t) for t in self.terms]}
        return {"kind": "sampled2d", "values": [list(r) for r in self.values]}


def evaluate2d(V2, x, y):
    """Evaluate the Z^2-periodic potential at (x, y); broadcasts like numpy."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if V2.kind == "separable":
        return evaluate(V2.vx, x) + evaluate(V2.wy, y)
    xr = x - np.floor(x)
    yr = y - np.floor(y)
    if V2.kind == "fourier2d":
        out = np.zeros(np.broadcast(xr, yr).shape)
        for kx, ky, a, b in V2.terms:
            arg = 2.0 * np.pi * (kx * xr + ky * yr)
            out = out + a * np.cos(arg) + b * np.sin(arg)
        return out
    arr = np.asarray(V2.values)
    nx, ny = arr.shape
    px = xr * nx
    py = yr * ny
    i0 = np.floor(px).astype(int) % nx
    j0 = np.floor(py).astype(int) % ny
    fx = px - np.floor(px)
    fy = py - np.floor(py)
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    return (arr[i0, j0] * (1 - fx) * (1 - fy) + arr[i1, j0] * fx * (1 - fy)
            + arr[i0, j1] * (1 - fx) * fy + arr[i1, j1] * fx * fy)


def dislocate2d(V2, t, x, y):
    """The 2D dislocation potential: V2(x, y) for x >= 0, V2(x + t, y) for x < 0."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t: dislocation parameter must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, evaluate2d(V2, x, y), evaluate2d(V2, x + t, y))


@dataclass(frozen=True)
class StripConfig:
    """Discretization descriptor for the strip or the Dirichlet square Q_n."""

    n: int
    t: float
    h: float
    theta: float = 0.0
    geometry: str = "strip-periodic"

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n: must be >= 1")
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError("t: must lie in [0, 1]")
        if self.h <= 0:
            raise ValidationError("h: must be positive")
        if self.geometry not in ("strip-periodic", "square-dirichlet"):
            raise ValidationError("geometry: expected 'strip-periodic' or 'square-dirichlet'")
        if self.geometry == "square-dirichlet" and self.theta != 0.0:
            raise ValidationError("theta: only meaningful for strip-periodic geometry")
        if not 0.0 <= self.theta < 2.0 * math.pi:
            raise ValidationError("theta: must lie in [0, 2 pi)")


@dataclass(frozen=True)
class StripOperator:
    """Assembled sparse operator plus its grid geometry."""

    matrix: object = field(repr=False)
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    shape: tuple = ()
    config: StripConfig | None = None
    doubled: bool = False

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def node_x(self):
        """x coordinate of every degree of freedom (lexicographic x-major order)."""
        mx, my = self.shape
        base = np.repeat(self.xs, my)
        return np.concatenate([base, base]) if self.doubled else base


def _laplacian_1d(m, h, wrap, phase=0.0):
    inv_h2 = 1.0 / (h * h)
    main = np.full(m, 2.0 * inv_h2)
    off = np.full(m - 1, -inv_h2)
    use_complex = wrap and abs(math.sin(phase)) > 1e-14
    dtype = complex if use_complex else float
    A = sp.diags([off, main, off], [-1, 0, 1], format="lil", dtype=dtype)
    if wrap:
        w = -inv_h2 * (math.cos(phase) + (1j * math.sin(phase) if use_complex else 0.0))
        A[m - 1, 0] += w
        A[0, m - 1] += np.conj(w) if use_complex else w
    return A.tocsr()


def assemble(V2, cfg):
    """5-point finite-difference operator for -Lap + W_t in the given geometry.

    Strip geometry uses cell-centered nodes with periodic x-wrap and a
    theta-twisted y-wrap; for theta not in {0, pi} the complex Hermitian
    operator is returned as the equivalent doubled real-symmetric system.
    Square geometry uses interior vertex nodes with Dirichlet elimination.
    """
    if cfg.geometry == "strip-periodic":
        lx = 2 * cfg.n + cfg.t
        mx = max(2, round(lx / cfg.h))
        hx = lx / mx
        my = max(2, round(1.0 / cfg.h))
        hy = 1.0 / my
        if min(1.0 / hx, 1.0 / hy) < MIN_POINTS_PER_UNIT - 1e-9:
            raise ValidationError("h: fewer than 16 grid points per unit length")
        xs = -(cfg.n + cfg.t) + (np.arange(mx) + 0.5) * hx
        ys = (np.arange(my) + 0.5) * hy
        Lx = _laplacian_1d(mx, hx, wrap=True)
        Ly = _laplacian_1d(my, hy, wrap=True, phase=cfg.theta)
        W = dislocate2d(V2, cfg.t, xs[:, None], ys[None, :]).ravel()
        A = sp.kron(Lx, sp.identity(my)) + sp.kron(sp.identity(mx), Ly) + sp.diags(W)
        if A.dtype.kind == "c":
            Ar, Ai = A.real.tocsr(), A.imag.tocsr()
            K = sp.bmat([[Ar, -Ai], [Ai, Ar]], format="csr")
            return StripOperator(K, xs, ys, (mx, my), cfg, doubled=True)
        return StripOperator(A.tocsr(), xs, ys, (mx, my), cfg, doubled=False)

    # square-dirichlet on Q_n = (-n, n)^2, interior vertex nodes
    m_cells = max(2, round(2 * cfg.n / cfg.h))
    h = 2 * cfg.n / m_cells
    if 1.0 / h < MIN_POINTS_PER_UNIT - 1e-9:
        raise ValidationError("h: fewer than 16 grid points per unit length")
    m = m_cells - 1
    xs = -cfg.n + (np.arange(m) + 1) * h
    ys = xs.copy()
    L = _laplacian_1d(m, h, wrap=False)
    W = dislocate2d(V2, cfg.t, xs[:, None], ys[None, :]).ravel()
    A = sp.kron(L, sp.identity(m)) + sp.kron(sp.identity(m), L) + sp.diags(W)
    return StripOperator(A.tocsr(), xs, ys, (m, m), cfg, doubled=False)


def strip_eigenvalues_in_window(op, window, return_vectors=False):
    """Eigenvalues of an assembled operator inside [lo, hi] (deduplicated if doubled)."""
    lo, hi = window
    out = eigencount.eigenvalues_in_window(op.matrix, lo, hi, return_vectors=return_vectors)
    if not op.doubled:
        return out
    if return_vectors:
        vals, vecs = out
        return vals[::2], vecs[:, ::2]
    return out[::2]


def gap_eigenvalues_strip(V2, n, t, window, h, theta=0.0, return_vectors=False):
    """All strip eigenvalues of S_{n,t} in a window verified empty at t = 0."""
    lo, hi = window
    if lo >= hi:
        raise ValidationError("window: lo must be below hi")
    cfg0 = StripConfig(n=n, t=0.0, h=h, theta=theta)
    op0 = assemble(V2, cfg0)
    n0 = len(strip_eigenvalues_in_window(op0, window))
    if n0 != 0:
        raise ValidationError(
            f"window ({lo}, {hi}) is not inside a spectral gap of the t = 0 operator "
            f"({n0} eigenvalues found)"
        )
    cfg = StripConfig(n=n, t=t, h=h, theta=theta)
    op = assemble(V2, cfg)
    out = strip_eigenvalues_in_window(op, window, return_vectors=return_vectors)
    if return_vectors:
        vals, vecs = out
        return np.sort(vals), vecs[:, np.argsort(vals)], op
    return np.sort(out)


def strip_gap_sweep(V2, n, t_list, window, h, theta=0.0):
    """Strip gap eigenvalues over a t sweep, verifying the t = 0 gap once.

    Returns a list of (t, sorted eigenvalue array) pairs.
    """
    lo, hi = window
    cfg0 = StripConfig(n=n, t=0.0, h=h, theta=theta)
    n0 = len(strip_eigenvalues_in_window(assemble(V2, cfg0), window))
    if n0 != 0:
        raise ValidationError(
            f"window ({lo}, {hi}) is not inside a spectral gap of the t = 0 operator "
            f"({n0} eigenvalues found)"
        )
    out = []
    for t in t_list:
        op = assemble(V2, StripConfig(n=n, t=float(t), h=h, theta=theta))
        vals = np.sort(strip_eigenvalues_in_window(op, window))
        out.append((float(t), vals))
    return out


@dataclass(frozen=True)
class LocalizationReport:
    cutoffs: tuple
    mass_fractions: tuple
    decay_rate: float
    was_normalized: bool


def interface_localization(op, vector, cutoffs):
    """Squared-norm mass beyond |x| >= L for each cutoff, plus a fitted decay rate.

    Input vectors are normalized internally (and flagged) if needed.  The
    reported rate is the amplitude decay rate: half the fitted slope of
    -log(mass fraction), directly comparable to the 1D Floquet rate
    log|rho| / period at the same energy.
    """
    v = np.asarray(vector, dtype=float)
    if op.doubled and v.shape[0] == op.matrix.shape[0]:
        mx, my = op.shape
        v = np.hypot(v[: mx * my], v[mx * my:])
    nrm = np.linalg.norm(v)
    was_normalized = abs(nrm - 1.0) <= 1e-9
    if nrm == 0:
        raise ValidationError("eigenvector: zero vector")
    v = v / nrm
    mx, my = op.shape
    absx = np.abs(np.repeat(op.xs, my))
    w2 = v * v
    fractions = [float(np.sum(w2[absx >= L])) for L in cutoffs]
    pos = [(L, fr) for L, fr in zip(cutoffs, fractions) if fr > 1e-300]
    if len(pos) >= 2:
        Ls = np.array([p[0] for p in pos])
        lf = np.log([p[1] for p in pos])
        rate = float(-0.5 * np.polyfit(Ls, lf, 1)[0])
    else:
        rate = math.inf
    return LocalizationReport(tuple(cutoffs), tuple(fractions), rate, was_normalized)


def square_counts(V2, t, n, interval, h):
    """Eigenvalues of the Dirichlet-square operator in ``interval``, with
    multiplicity, via inertia at the two endpoints."""
    a, b = interval
    if a >= b:
        raise ValidationError("interval: lo must be below hi")
    cfg = StripConfig(n=n, t=t, h=h, geometry="square-dirichlet")
    op = assemble(V2, cfg)
    return eigencount.count_in_window(op.matrix, a, b)


@dataclass(frozen=True)
class DosEstimate:
    interval: tuple
    n_list: tuple
    counts: tuple
    normalized: tuple
    kind: str


def surface_dos(V2, t, interval, n_list, h):
    """Surface-scaled counts N(J, D_t^(n)) / (2n) over the n list."""
    counts = tuple(square_counts(V2, t, n, interval, h) for n in n_list)
    return DosEstimate(tuple(interval), tuple(n_list), counts,
                       tuple(c / (2.0 * n) for c, n in zip(counts, n_list)), "surface")


def bulk_dos(V2, t, interval, n_list, h):
    """Bulk-scaled counts N(I, D_t^(n)) / (4n^2) over the n list."""
    counts = tuple(square_counts(V2, t, n, interval, h) for n in n_list)
    return DosEstimate(tuple(interval), tuple(n_list), counts,
                       tuple(c / (4.0 * n * n) for c, n in zip(counts, n_list)), "bulk")


def transverse_fd_eigenvalues(h):
    """Closed-form eigenvalues (2 - 2 cos(2 pi m h)) / h^2 of the periodic
    transverse second-difference on the unit width."""
    my = round(1.0 / h)
    hy = 1.0 / my
    return np.array([(2.0 - 2.0 * math.cos(2.0 * math.pi * j * hy)) / (hy * hy)
                     for j in range(my)])
