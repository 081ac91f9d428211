"""Eigenvalue counting and windowed eigensolves for symmetric operators.

Counts below a level come from matrix inertia: the signs of the pivots of a
symmetric factorization.  Dense matrices use the Bunch-Kaufman LDL^T from
LAPACK; large sparse matrices use SuperLU in symmetric mode with diagonal
pivoting, whose U-diagonal signs reproduce the inertia.  A zero pivot means
the level hit an eigenvalue: the level is perturbed once and retried.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError

DENSE_CUTOFF = 1500


class _ZeroPivot(Exception):
    pass


def _negatives_dense(B):
    lu, d, _ = scipy.linalg.ldl(B)
    m = B.shape[0]
    tiny = 1e-14 * max(np.max(np.abs(B)), 1.0)
    neg = 0
    i = 0
    while i < m:
        if i + 1 < m and d[i, i + 1] != 0.0:
            a, b, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
            det = a * c - b * b
            if abs(det) <= tiny * tiny:
                raise _ZeroPivot
            if det < 0:
                neg += 1
            elif a + c < 0:
                neg += 2
            i += 2
        else:
            piv = d[i, i]
            if abs(piv) <= tiny:
                raise _ZeroPivot
            if piv < 0:
                neg += 1
            i += 1
    return neg


def _negatives_sparse(B):
    B = sp.csc_matrix(B)
    tiny = 1e-14 * max(abs(B).max(), 1.0)
    try:
        lu = spla.splu(
            B,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # singular factorization
        raise _ZeroPivot from exc
    du = lu.U.diagonal()
    if np.min(np.abs(du)) <= tiny:
        raise _ZeroPivot
    # row swaps would break the inertia argument; with threshold 0 they only
    # occur at (near-)zero pivots, which the check above already rejects
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise _ZeroPivot
    return int(np.sum(du < 0))


def count_below(A, level, perturb=1e-9):
    """Number of eigenvalues of symmetric ``A`` strictly below ``level``.

    On a zero pivot the level is shifted by ``perturb`` and retried once;
    a second failure raises NumericalError advising a different level.
    """
    dense = not sp.issparse(A)
    m = A.shape[0]
    for attempt, lev in enumerate((level, level + perturb)):
        if dense or m <= DENSE_CUTOFF:
            B = (A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)) - lev * np.eye(m)
            fn = _negatives_dense
        else:
            B = (A - lev * sp.identity(m, format="csc")).tocsc()
            fn = _negatives_sparse
        try:
            return fn(B)
        except _ZeroPivot:
            if attempt == 1:
                raise NumericalError(
                    f"inertia hit a zero pivot at level {level} (and at the perturbed retry); "
                    "choose a level away from the spectrum"
                ) from None
    raise AssertionError("unreachable")


def count_in_window(A, lo, hi, perturb=1e-9):
    if hi < lo:
        raise ValueError("window: lo must not exceed hi")
    return count_below(A, hi, perturb) - count_below(A, lo, perturb)


def eigenvalues_in_window(A, lo, hi, dense_cutoff=4096, return_vectors=False):
    """All eigenvalues of symmetric ``A`` in [lo, hi], inertia-verified.

    Dense diagonalization below ``dense_cutoff``; otherwise shift-invert
    Lanczos around the window center with k grown until the inertia count is
    matched.
    """
    m = A.shape[0]
    expected = count_in_window(A, lo, hi)
    if expected == 0 and not return_vectors:
        return np.array([])
    if m <= dense_cutoff:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        if return_vectors:
            allvals, allvecs = scipy.linalg.eigh(Ad)
            keep = (allvals >= lo) & (allvals <= hi)
            if int(np.sum(keep)) != expected:
                raise NumericalError("dense window eigensolve disagrees with the inertia count")
            return allvals[keep], allvecs[:, keep]
        vals = scipy.linalg.eigvalsh(Ad)
        vals = vals[(vals >= lo) & (vals <= hi)]
    else:
        if expected == 0:
            return (np.array([]), np.zeros((m, 0))) if return_vectors else np.array([])
        sigma = 0.5 * (lo + hi)
        k = min(m - 2, expected + 4)
        As = sp.csc_matrix(A)
        for _ in range(6):
            vals, vecs = spla.eigsh(As, k=k, sigma=sigma, which="LM")
            keep = (vals >= lo) & (vals <= hi)
            if int(np.sum(keep)) >= expected or k >= m - 2:
                order = np.argsort(vals[keep])
                if return_vectors:
                    return vals[keep][order], vecs[:, keep][:, order]
                vals = np.sort(vals[keep])
                break
            k = min(m - 2, 2 * k + 8)
        else:
            raise NumericalError("shift-invert sweep failed to recover the inertia count")
    if len(vals) != expected:
        raise NumericalError(
            f"window eigensolve found {len(vals)} eigenvalues but inertia promises {expected}"
        )
    return vals
