"""Coarse-grained matrices on triadic cubes and their convexity bookkeeping.

The Dirichlet energy over affine boundary data defines a(U); the dual
(Neumann) energy defines a*(U).  Both are exactly quadratic in the discrete
setting, so d(d+1)/2 solves recover each matrix by polarization.  The gap
functional J(U, p, q) and the subadditivity/duality ledgers quantify how
fast the two pinch together under coarsening.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fields import CoefficientField
from .lattice import TriadicCube, triadic_partition, cell_average
from .solver import SolveOptions, Solution, solve_dirichlet_affine, solve_neumann_affine

__all__ = [
    "CoarseGrainResult",
    "CascadeRecord",
    "coarse_matrices",
    "J_value",
    "duality_defect",
    "subadditivity_ledger",
    "multiscale_E",
    "spatial_average_identities",
    "write_cascade_csv",
    "read_cascade_csv",
]


@dataclass
class CoarseGrainResult:
    """Coarse pair on one cube, with the basis extremals kept for audits."""

    cube: TriadicCube
    a_upper: np.ndarray          # a(U): Dirichlet coarse-grained matrix
    a_lower: np.ndarray          # a*(U): dual (Neumann) coarse-grained matrix
    dirichlet_basis: list        # Solution per basis slope e_i (None for 1-cell cubes)
    neumann_basis: list          # Solution per basis flux e_i
    iterations: int
    residual: float
    symmetry_drift: float        # max asymmetry removed by the transpose average


@dataclass
class CascadeRecord:
    """Per-level summary of the coarse-graining cascade on one sample."""

    level: int
    a_upper_mean: np.ndarray
    a_upper_var: np.ndarray      # entrywise variance over the partition
    a_lower_harmonic: np.ndarray
    gap_mean: float              # mean over subcubes of |a - a*| (spectral norm)
    defect_bound_mean: float     # mean of sum_i J(U, e_i, a*(U) e_i)


def _unit_vectors(d):
    return [np.eye(d)[i] for i in range(d)]


def coarse_matrices(a_field: CoefficientField, cube: TriadicCube,
                    opts: SolveOptions = None) -> CoarseGrainResult:
    """Compute a(U) and a*(U) on the cube via polarization of the two energies."""
    opts = opts or SolveOptions()
    d = a_field.grid.d
    es = _unit_vectors(d)

    # closed form for a single-cell cube: both energies reduce to the cell matrix
    if cube.side_cells(a_field.grid) == 1:
        sl = cube.cell_slices(a_field.grid)
        acell = np.asarray(a_field.a[sl]).reshape(d, d)
        return CoarseGrainResult(cube, acell.copy(), acell.copy(),
                                 [None] * d, [None] * d, 0, 0.0, 0.0)

    iters = 0
    worst = 0.0

    def account(s: Solution) -> Solution:
        nonlocal iters, worst
        iters += s.iterations
        worst = max(worst, s.residual)
        return s

    def polarize(energy, basis_solutions):
        diag = [2.0 * basis_solutions[i].energy for i in range(d)]
        M = np.diag(diag)
        for i in range(d):
            for j in range(i + 1, d):
                cross = energy(es[i] + es[j]) - 0.5 * diag[i] - 0.5 * diag[j]
                M[i, j] = M[j, i] = cross
        return M

    dir_basis = [account(solve_dirichlet_affine(a_field, cube, e, opts)) for e in es]
    a_up = polarize(lambda p: account(solve_dirichlet_affine(a_field, cube, p, opts)).energy,
                    dir_basis)
    neu_basis = [account(solve_neumann_affine(a_field, cube, e, opts)) for e in es]
    astar_inv = polarize(lambda q: account(solve_neumann_affine(a_field, cube, q, opts)).energy,
                         neu_basis)
    a_lo = np.linalg.inv(astar_inv)

    drift = max(np.abs(a_up - a_up.T).max(), np.abs(a_lo - a_lo.T).max())
    a_up = 0.5 * (a_up + a_up.T)
    a_lo = 0.5 * (a_lo + a_lo.T)
    return CoarseGrainResult(cube, a_up, a_lo, dir_basis, neu_basis,
                             iters, worst, float(drift))


def J_value(r: CoarseGrainResult, p, q) -> float:
    """Gap functional J(U, p, q) = 1/2 p.a(U)p + 1/2 q.a*(U)^-1 q - p.q (>= 0)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(0.5 * p @ r.a_upper @ p
                 + 0.5 * q @ np.linalg.solve(r.a_lower, q) - p @ q)


def duality_defect(r: CoarseGrainResult, b: np.ndarray = None) -> dict:
    """Spectral-norm gap |a(U) - a*(U)| and its controlling sum of basis J values.

    With b = a*(U) (the default) the gap is bounded by a realization-independent
    multiple of the returned bound.
    """
    b = r.a_lower if b is None else np.asarray(b, dtype=float)
    if not np.allclose(b, b.T, atol=1e-12):
        raise ValueError("comparison matrix must be symmetric")
    d = r.a_upper.shape[0]
    gap = float(np.linalg.norm(r.a_upper - r.a_lower, ord=2))
    bound = float(sum(J_value(r, e, b @ e) for e in _unit_vectors(d)))
    return {"gap": gap, "bound": bound}


def subadditivity_ledger(a_field: CoefficientField, m: int, n: int,
                         opts: SolveOptions = None) -> dict:
    """Coarse matrices on the origin level-m cube vs. its level-n children.

    Subadditivity: a(parent) <= arithmetic mean of a(child) and
    a*(parent) >= harmonic mean of a*(child), in the matrix order.  The
    returned slack eigenvalues are nonnegative up to solver noise.
    """
    if not 0 <= n < m:
        raise ValueError(f"need 0 <= n < m, got n={n}, m={m}")
    cube = TriadicCube(m, (0,) * a_field.grid.d)
    parent = coarse_matrices(a_field, cube, opts)
    children = [coarse_matrices(a_field, c, opts) for c in triadic_partition(cube, n)]
    up_mean = np.mean([c.a_upper for c in children], axis=0)
    lo_harm = np.linalg.inv(np.mean([np.linalg.inv(c.a_lower) for c in children], axis=0))
    up_slack = np.linalg.eigvalsh(up_mean - parent.a_upper).min()
    lo_slack = np.linalg.eigvalsh(parent.a_lower - lo_harm).min()
    return {
        "parent": parent,
        "children": children,
        "a_upper_child_mean": up_mean,
        "a_lower_child_harmonic": lo_harm,
        "upper_slack_min_eig": float(up_slack),
        "lower_slack_min_eig": float(lo_slack),
    }


def multiscale_E(a_field: CoefficientField, m: int, a_ref: np.ndarray,
                 opts: SolveOptions = None) -> dict:
    """Scale-weighted pinching functional against a reference matrix.

        E(m) = sum_{n=0}^{m} 3^(n-m) sum_i mean_{level-n cubes in the level-m
               cube at the origin} J(U, e_i, a_ref e_i)

    Vanishes iff every subcube's pair of energies is saturated by the affine
    data (e_i, a_ref e_i); decreasing in m signals coarse-graining progress.
    """
    a_ref = np.asarray(a_ref, dtype=float)
    if not np.allclose(a_ref, a_ref.T, atol=1e-12):
        raise ValueError("reference matrix must be symmetric")
    d = a_field.grid.d
    if not 0 <= m <= a_field.grid.m:
        raise ValueError(f"level {m} out of range [0, {a_field.grid.m}]")
    cube = TriadicCube(m, (0,) * d)
    es = _unit_vectors(d)
    per_level = []
    for n in range(m + 1):
        vals = []
        for c in triadic_partition(cube, n):
            r = coarse_matrices(a_field, c, opts)
            vals.append(sum(J_value(r, e, a_ref @ e) for e in es))
        per_level.append(float(np.mean(vals)))
    E = float(sum(3.0 ** (n - m) * per_level[n] for n in range(m + 1)))
    return {"E": E, "per_level_J_mean": per_level, "m": m}


def spatial_average_identities(r: CoarseGrainResult, a_field: CoefficientField = None) -> dict:
    """First-variation averages of the cached basis extremals.

    The Dirichlet slope-e_i minimizer has cell-average gradient exactly e_i
    and cell-average flux a(U) e_i; the Neumann flux-e_i maximizer has
    cell-average flux exactly e_i and cell-average gradient a*(U)^-1 e_i.
    Returns the four sup-norm drifts and their max.
    """
    if any(s is None for s in r.dirichlet_basis):
        return {"grad_exact": 0.0, "flux_vs_matrix": 0.0,
                "flux_exact": 0.0, "grad_vs_matrix": 0.0, "max": 0.0}
    d = r.a_upper.shape[0]
    ax = tuple(range(d))
    astar_inv = np.linalg.inv(r.a_lower)
    ge = fe = fm = gm = 0.0
    for i, e in enumerate(_unit_vectors(d)):
        sd = r.dirichlet_basis[i]
        sn = r.neumann_basis[i]
        ge = max(ge, np.abs(sd.gradient.mean(axis=ax) - e).max())
        fm = max(fm, np.abs(sd.flux.mean(axis=ax) - r.a_upper @ e).max())
        fe = max(fe, np.abs(sn.flux.mean(axis=ax) - e).max())
        gm = max(gm, np.abs(sn.gradient.mean(axis=ax) - astar_inv @ e).max())
    out = {"grad_exact": float(ge), "flux_vs_matrix": float(fm),
           "flux_exact": float(fe), "grad_vs_matrix": float(gm)}
    out["max"] = max(out.values())
    return out


def cascade(a_field: CoefficientField, cube: TriadicCube, levels,
            opts: SolveOptions = None) -> list:
    """CascadeRecord per level: partition statistics of the coarse pair."""
    out = []
    for n in sorted(levels):
        results = [coarse_matrices(a_field, c, opts) for c in triadic_partition(cube, n)]
        ups = np.array([r.a_upper for r in results])
        gaps = [np.linalg.norm(r.a_upper - r.a_lower, ord=2) for r in results]
        bounds = [duality_defect(r)["bound"] for r in results]
        out.append(CascadeRecord(
            level=n,
            a_upper_mean=ups.mean(axis=0),
            a_upper_var=ups.var(axis=0),
            a_lower_harmonic=np.linalg.inv(
                np.mean([np.linalg.inv(r.a_lower) for r in results], axis=0)),
            gap_mean=float(np.mean(gaps)),
            defect_bound_mean=float(np.mean(bounds)),
        ))
    return out


# ---------------------------------------------------------------------------
# flat CSV serialization of cascade records
# ---------------------------------------------------------------------------


def write_cascade_csv(path, records) -> None:
    if not records:
        raise ValueError("no records to write")
    d = records[0].a_upper_mean.shape[0]
    cols = ["level", "gap_mean", "defect_bound_mean"]
    cols += [f"a_upper_mean_{i}{j}" for i in range(d) for j in range(d)]
    cols += [f"a_upper_var_{i}{j}" for i in range(d) for j in range(d)]
    cols += [f"a_lower_harm_{i}{j}" for i in range(d) for j in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            row = [r.level, repr(r.gap_mean), repr(r.defect_bound_mean)]
            for arr in (r.a_upper_mean, r.a_upper_var, r.a_lower_harmonic):
                row += [repr(float(x)) for x in arr.ravel()]
            w.writerow(row)


def read_cascade_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        def block(prefix):
            keys = sorted(k for k in row if k.startswith(prefix))
            d = int(round(len(keys) ** 0.5))
            return np.array([float(row[k]) for k in keys]).reshape(d, d)

        out.append(CascadeRecord(
            level=int(row["level"]),
            a_upper_mean=block("a_upper_mean_"),
            a_upper_var=block("a_upper_var_"),
            a_lower_harmonic=block("a_lower_harm_"),
            gap_mean=float(row["gap_mean"]),
            defect_bound_mean=float(row["defect_bound_mean"]),
        ))
    return out
