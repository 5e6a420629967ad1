"""Orthonormal bases for L2(mu_x), parity transforms, and moment tensors.

Parity (Walsh) transforms index tables and coefficient vectors the same way:
bit k-1 of the index is coordinate k, with bit value 1 meaning symbol -1 on
the uniform hypercube. That matches the row order of JuntaProblem tables
built from HypercubeJunta (marginal values (+1, -1)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .junta import FiniteMarginal, JuntaProblem

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class OrthonormalBasis:
    """Row j of psi tabulates the basis function psi_j on the atoms of mu_x."""

    marginal: FiniteMarginal
    psi: np.ndarray

    @property
    def size(self) -> int:
        return self.psi.shape[0]

    def gram(self) -> np.ndarray:
        return (self.psi * self.marginal.probs) @ self.psi.T


def gram_schmidt(marginal: FiniteMarginal, seed: int | None = None) -> OrthonormalBasis:
    """Orthonormal basis of L2(mu_x) with psi_0 = 1.

    Seeds with monomials 1, x, x^2, ... in ascending degree (or a random
    full-rank family when `seed` is given) and orthogonalizes twice for
    stability. Any valid choice yields the same detectability verdicts.
    """
    marginal = marginal.drop_null_atoms()
    n = marginal.nx
    vals = marginal.values
    probs = marginal.probs
    if seed is None:
        seeds = np.vander(vals, n, increasing=True).T.astype(float)
    else:
        rng = np.random.default_rng(seed)
        seeds = rng.standard_normal((n, n))
        seeds[0] = 1.0

    def project(v, basis_rows):
        for b in basis_rows:
            v = v - (probs @ (v * b)) * b
        return v

    rows: list[np.ndarray] = []
    for k in range(n):
        v = project(seeds[k].astype(float), rows)
        v = project(v, rows)  # one re-orthogonalization pass
        norm = np.sqrt(probs @ v**2)
        if norm < 1e-8:
            raise ValueError("numerically degenerate marginal: seed functions not independent")
        rows.append(v / norm)
    psi = np.vstack(rows)
    if seed is None:
        psi[0] = 1.0  # exact constant

    gram = (psi * probs) @ psi.T
    if np.max(np.abs(gram - np.eye(n))) > ORTHO_TOL:
        raise ValueError("orthonormalization failed the tolerance check")
    if np.max(np.abs(psi[1:] @ probs)) > ORTHO_TOL:
        raise ValueError("zero-mean check failed for psi_j, j >= 1")
    basis = OrthonormalBasis(marginal, psi)
    return basis


# ---------------------------------------------------------------------------
# Fast parity (Walsh) transform
# ---------------------------------------------------------------------------


def _butterfly(table: np.ndarray) -> np.ndarray:
    a = np.array(table, dtype=float)
    n = a.size
    if n & (n - 1) or n == 0:
        raise ValueError(f"length must be a power of two, got {n}")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        top = a[:, 0, :] + a[:, 1, :]
        bot = a[:, 0, :] - a[:, 1, :]
        a = np.stack([top, bot], axis=1)
        h *= 2
    return a.reshape(n)


def wht(table) -> np.ndarray:
    """Parity coefficients of a table on the uniform hypercube.

    Entry at mask U is E_{z ~ Unif}[table(z) chi_U(z)]; inverse_wht undoes it.
    """
    a = np.asarray(table, dtype=float)
    return _butterfly(a) / a.size


def inverse_wht(coeffs) -> np.ndarray:
    """Tabulate sum_U coeffs[U] chi_U(z) over all hypercube points."""
    return _butterfly(np.asarray(coeffs, dtype=float))


# ---------------------------------------------------------------------------
# Conditional moment tensors
# ---------------------------------------------------------------------------


def conditional_moment_tensor(
    problem: JuntaProblem, basis: OrthonormalBasis, u: Iterable[int]
) -> np.ndarray:
    """Exact G[a, j_1..j_m] = E[1{y=a} prod_{i in U} psi_{j_i}(z_i)], all j_i >= 1.

    Shape (|Y|,) + (|X|-1,)*|U|. These are the only moments the detectability
    criteria need: a set is witnessed iff some entry (or some fixed label
    combination of entries) is nonzero.
    """
    coords = sorted(set(int(c) for c in u))
    if not coords:
        raise ValueError("U must be non-empty")
    if basis.psi.shape[1] != problem.marginal.nx:
        raise ValueError(
            "basis tabulated on a different atom set; drop zero-probability atoms "
            "from the problem's marginal before detection"
        )
    nb = basis.size - 1
    factors = np.ones((problem.n_rows, 1))
    for i in coords:
        sym = problem.coord_symbols(i)
        per_coord = basis.psi[1:, sym].T  # (rows, nb)
        factors = (factors[:, :, None] * per_coord[:, None, :]).reshape(problem.n_rows, -1)
    weighted = problem.row_weights[:, None] * problem.cond  # (rows, ny)
    flat = weighted.T @ factors  # (ny, nb^m)
    return flat.reshape((problem.ny,) + (nb,) * len(coords))
