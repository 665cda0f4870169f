"""Exact fast solvers for the constant-coefficient cell-centered element operator.

The operator sum_k Gk^T Gk (Gk = cell-centered gradient component) is
diagonalized by Fourier modes on the torus, by sine modes on the Dirichlet
interior grid, and by cosine modes on the free (Neumann) node grid.  These
solves back both the identity-Laplacian problems and the preconditioner that
keeps conjugate-gradient iteration counts bounded by the ellipticity ratio.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

__all__ = [
    "torus_symbol",
    "torus_solve_nodespace",
    "dirichlet_solve_nodespace",
    "neumann_solve_nodespace",
]

_EIG_FLOOR = 1e-12


def _symbol_from_1d(sin2, cos2, h):
    """Assemble sum_k (4 sin2_k / h^2) prod_{j!=k} cos2_j by outer products."""
    d = len(sin2)
    total = None
    for k in range(d):
        term = None
        for j in range(d):
            f = (4.0 * sin2[j] / h**2) if j == k else cos2[j]
            shape = [1] * d
            shape[j] = f.size
            f = f.reshape(shape)
            term = f if term is None else term * f
        total = term if total is None else total + term
    return total


def torus_symbol(shape, h):
    sin2 = []
    cos2 = []
    for n in shape:
        theta = 2.0 * np.pi * np.arange(n) / n
        sin2.append(np.sin(theta / 2.0) ** 2)
        cos2.append(np.cos(theta / 2.0) ** 2)
    return _symbol_from_1d(sin2, cos2, h)


def torus_solve_nodespace(b: np.ndarray, h: float, symbol=None) -> np.ndarray:
    """Pseudoinverse of the periodic constant operator applied to b."""
    if symbol is None:
        symbol = torus_symbol(b.shape, h)
    bh = np.fft.fftn(b)
    mask = symbol > _EIG_FLOOR * symbol.max()
    out = np.zeros_like(bh)
    out[mask] = bh[mask] / symbol[mask]
    return np.fft.ifftn(out).real


def _sine_symbol(shape, h):
    # interior nodes: j = 1..N-1 per axis, N = shape[axis] + 1 cells
    sin2 = []
    cos2 = []
    for n in shape:
        N = n + 1
        omega = np.pi * np.arange(1, N) / N
        sin2.append(np.sin(omega / 2.0) ** 2)
        cos2.append(np.cos(omega / 2.0) ** 2)
    return _symbol_from_1d(sin2, cos2, h)


def dirichlet_solve_nodespace(b: np.ndarray, h: float, symbol=None) -> np.ndarray:
    """Inverse of the constant operator on the zero-boundary interior grid."""
    if symbol is None:
        symbol = _sine_symbol(b.shape, h)
    bh = scipy.fft.dstn(b, type=1)
    mask = symbol > _EIG_FLOOR * symbol.max()
    out = np.zeros_like(bh)
    out[mask] = bh[mask] / symbol[mask]
    return scipy.fft.idstn(out, type=1)


def neumann_solve_nodespace(b: np.ndarray, h: float, symbol=None) -> np.ndarray:
    """Pseudoinverse of the constant operator on the free node grid.

    Free-boundary problems are folded onto a double-size torus by even
    reflection; boundary-plane loads carry weight 2 per extreme coordinate so
    the reflected quadratic form matches the boxed one exactly.
    """
    w = b.astype(float, copy=True)
    for axis in range(b.ndim):
        first = [slice(None)] * b.ndim
        last = [slice(None)] * b.ndim
        first[axis] = slice(0, 1)
        last[axis] = slice(-1, None)
        w[tuple(first)] *= 2.0
        w[tuple(last)] *= 2.0
    for axis in range(b.ndim):
        mirror = [slice(None)] * w.ndim
        mirror[axis] = slice(-2, 0, -1)
        w = np.concatenate([w, w[tuple(mirror)]], axis=axis)
    v = torus_solve_nodespace(w, h, symbol=symbol)
    keep = tuple(slice(0, n) for n in b.shape)
    return v[keep]
