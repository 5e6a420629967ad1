"""Detectable-set systems C_SQ, C_CSQ, C_DLQ_l and their witnesses.

A subset U of the support is detectable for query model A when some test
function T in Psi_A and zero-mean coordinate functions T_i give
E[T(y) prod_{i in U} T_i(z_i)] != 0. Expanding the T_i in an orthonormal
basis reduces every verdict to the conditional moment tensor
G[a, j] = E[1{y=a} prod psi_{j_i}(z_i)]:

* SQ:   U detectable iff some column G[., j] is nonzero (the witness label
        function is xi_U(y) = E[prod psi_{j_i}(z_i) | y]).
* CSQ:  iff sum_a y_a G[a, j] != 0 for some j (T is the identity).
* DLQ:  iff sum_a l'(u, y_a) G[a, j] != 0 for some j and some u; u ranges
        over a grid that includes the derivative's branch points, so for
        piecewise losses the realizable threshold functions are all hit.

All decisions are made on normalized values |E| / (||T|| prod ||T_i||) with
an absolute tolerance; the expectations themselves are exact sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .fourier import OrthonormalBasis, conditional_moment_tensor, gram_schmidt
from .junta import JuntaProblem
from .losses import LossSpec
from .setsystem import INFINITY, SetSystem, coords_from_mask, cover, leap, rel_cover, rel_leap

DETECT_TOL = 1e-9
_NEGLIGIBLE_MASS = 1e-300


@dataclass(frozen=True)
class Witness:
    """Normalized test functions certifying one detectable set.

    t_label tabulates T on the labels, t_coords the zero-mean T_i on the
    atoms of X; ||T||_{mu_y} * prod ||T_i||_{mu_x} = 1 and beta is the exact
    expectation re-evaluable through joint_expectation.
    """

    coords: tuple[int, ...]
    t_label: np.ndarray
    t_coords: dict[int, np.ndarray]
    beta: float
    u_value: float | None = None


@dataclass
class DetectReport:
    model: str
    p: int
    system: SetSystem
    witnesses: dict[int, Witness]
    beta: float | None
    tol: float
    loss: LossSpec | None = None
    grid_negatives: tuple[int, ...] = ()

    def exponent_tuple(self):
        return exponents(self)

    def to_dict(self) -> dict:
        def num(x):
            return "infinity" if x is INFINITY else x

        lp, cv, rl, rc = exponents(self)
        wit = {}
        for mask, w in self.witnesses.items():
            wit[",".join(str(c) for c in w.coords)] = {
                "t_label": w.t_label.tolist(),
                "t_coords": {str(i): t.tolist() for i, t in w.t_coords.items()},
                "beta": w.beta,
                "u": w.u_value,
            }
        return {
            "model": self.model,
            "P": self.p,
            "sets": [list(s) for s in self.system.members_as_coords()],
            "leap": num(lp),
            "cover": num(cv),
            "rel_leap": rl,
            "rel_cover": rc,
            "beta": self.beta,
            "tol": self.tol,
            "loss": self.loss.name if self.loss is not None else None,
            "grid_negatives": [list(coords_from_mask(m)) for m in self.grid_negatives],
            "witnesses": wit,
        }


def exponents(report: DetectReport):
    """(leap, cover, rel_leap, rel_cover) of the detected system.

    rel entries are None for an empty system, where the relative notions are
    undefined (degenerate support).
    """
    system = report.system
    lp = leap(system)
    cv = cover(system)
    if system.support == 0:
        return lp, cv, None, None
    return lp, cv, rel_leap(system), rel_cover(system)


def _iter_subsets(p: int):
    masks = sorted(range(1, 1 << p), key=lambda m: (m.bit_count(), m))
    return masks


def _finish_witness(problem, basis, mask, t_label, j_flat, u_value=None):
    coords = coords_from_mask(mask)
    nb = basis.size - 1
    j_multi = []
    rem = j_flat
    for _ in coords:
        j_multi.append(rem % nb)
        rem //= nb
    # factors were built coordinate-major in conditional_moment_tensor order:
    # the last coordinate varies fastest in the flattened index
    j_multi = list(reversed(j_multi))
    t_coords = {i: basis.psi[1 + j].copy() for i, j in zip(coords, j_multi)}
    beta = problem.joint_expectation(t_label, t_coords, coords)
    return Witness(coords, t_label, t_coords, beta, u_value)


def detect_sq(problem: JuntaProblem, tol: float = DETECT_TOL, basis: OrthonormalBasis | None = None) -> DetectReport:
    """C_SQ via the conditional-expectation criterion: U is detectable iff
    xi_U(y) = E[prod psi_{j_i}(z_i) | y] has positive norm for some basis tuple."""
    if basis is None:
        basis = gram_schmidt(problem.marginal)
    mu_y = problem.mu_y
    attained = mu_y > _NEGLIGIBLE_MASS
    detected: list[int] = []
    witnesses: dict[int, Witness] = {}
    for mask in _iter_subsets(problem.p):
        g = conditional_moment_tensor(problem, basis, coords_from_mask(mask))
        flat = g.reshape(problem.ny, -1)
        xi = np.zeros_like(flat)
        xi[attained] = flat[attained] / mu_y[attained, None]
        norms = np.sqrt(mu_y @ xi**2)  # ||xi_U||_{mu_y} per basis tuple
        j_best = int(np.argmax(norms))
        if norms[j_best] > tol:
            detected.append(mask)
            t_label = xi[:, j_best] / norms[j_best]
            witnesses[mask] = _finish_witness(problem, basis, mask, t_label, j_best)
    system = SetSystem(problem.p, tuple(detected))
    beta = min((abs(w.beta) for w in witnesses.values()), default=None)
    return DetectReport("SQ", problem.p, system, witnesses, beta, tol)


def _detect_linear(problem, basis, tol, t_rows, model, loss=None, u_values=None):
    """Shared CSQ/DLQ scan: each row of t_rows is a candidate T over labels."""
    t_rows = np.asarray(t_rows, dtype=float)
    norms = np.sqrt(t_rows**2 @ problem.mu_y)
    usable = norms > 0
    detected: list[int] = []
    witnesses: dict[int, Witness] = {}
    misses: list[int] = []
    for mask in _iter_subsets(problem.p):
        g = conditional_moment_tensor(problem, basis, coords_from_mask(mask))
        flat = g.reshape(problem.ny, -1)
        scores = np.zeros((t_rows.shape[0], flat.shape[1]))
        scores[usable] = np.abs(t_rows[usable] @ flat) / norms[usable, None]
        r, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
        if scores[r, j] > tol:
            detected.append(mask)
            t_label = t_rows[r] / norms[r]
            u_val = None if u_values is None else float(u_values[r])
            witnesses[mask] = _finish_witness(problem, basis, mask, t_label, j, u_val)
        elif model.startswith("DLQ"):
            misses.append(mask)
    system = SetSystem(problem.p, tuple(detected))
    beta = min((abs(w.beta) for w in witnesses.values()), default=None)
    return DetectReport(model, problem.p, system, witnesses, beta, tol, loss, tuple(misses))


def detect_csq(problem: JuntaProblem, tol: float = DETECT_TOL, basis: OrthonormalBasis | None = None) -> DetectReport:
    """C_CSQ: the label test is the identity, so U is detectable iff some
    basis tuple has E[y prod psi_{j_i}(z_i)] != 0."""
    labels = problem.labels_numeric()
    if basis is None:
        basis = gram_schmidt(problem.marginal)
    return _detect_linear(problem, basis, tol, labels[None, :], "CSQ")


def default_u_grid(loss: LossSpec, labels, n_uniform: int = 64, n_random: int = 16, seed: int = 1234) -> np.ndarray:
    """Evaluation points for the DLQ derivative test functions l'(u, .).

    Uniform points on [-R, R] with R = 4 max|label|, u = 0, seeded random
    points (zero sets of analytic derivatives have measure zero, so these
    find a nonzero u whenever one exists), and for piecewise losses the
    branch points, their midpoints, and points beyond both extremes.
    """
    labels = np.asarray(labels, dtype=float)
    r = 4.0 * float(np.max(np.abs(labels))) if np.any(labels != 0) else 1.0
    rng = np.random.default_rng(seed)
    pts = [np.linspace(-r, r, n_uniform), np.zeros(1), rng.uniform(-r, r, n_random)]
    bps = np.unique(loss.breakpoints_for(labels))
    if bps.size:
        pts.append(bps)
        if bps.size > 1:
            pts.append((bps[:-1] + bps[1:]) / 2.0)
        pts.append(np.array([bps[0] - 1.0, bps[-1] + 1.0]))
    return np.unique(np.concatenate(pts))


def detect_dlq(
    problem: JuntaProblem,
    loss: LossSpec,
    u_grid=None,
    tol: float = DETECT_TOL,
    basis: OrthonormalBasis | None = None,
    grid_seed: int = 1234,
) -> DetectReport:
    """C_DLQ_l: the label tests are the derivative slices l'(u, .) over u_grid.

    A single test function per query suffices: the detectability functional is
    linear in T, so a nonzero value over span{l'(u, .)} implies one at some u.
    Sets missed by every grid point are recorded in grid_negatives (a false
    negative needs the whole grid to land in the derivative's zero set).
    """
    labels = problem.labels_numeric()
    if basis is None:
        basis = gram_schmidt(problem.marginal)
    if u_grid is None:
        u_grid = default_u_grid(loss, labels, seed=grid_seed)
    u_grid = np.asarray(u_grid, dtype=float)
    if u_grid.size == 0:
        raise ValueError("u_grid must be non-empty")
    t_rows = loss.deriv(u_grid[:, None], labels[None, :])
    return _detect_linear(
        problem, basis, tol, t_rows, f"DLQ[{loss.name}]", loss=loss, u_values=u_grid
    )


def detect(problem: JuntaProblem, model: str, loss: LossSpec | None = None, **kw) -> DetectReport:
    if model == "SQ":
        return detect_sq(problem, **kw)
    if model == "CSQ":
        return detect_csq(problem, **kw)
    if model == "DLQ":
        if loss is None:
            raise ValueError("DLQ detection needs a loss")
        return detect_dlq(problem, loss, **kw)
    raise ValueError(f"unknown query model {model!r}")
