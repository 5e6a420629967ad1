"""Two-layer SGD, discrete dimension-free dynamics, kernels, and risk.

The particle network is f(x; Theta) = (1/M) sum_j [a_j sigma(<w_j, x> + b_j) + c_j];
batch SGD updates every theta_j with per-block step sizes and l2 decay.

The dimension-free (DF) state tracks weighted particles (a, b, u, c, s) living
on the P support coordinates plus a Gaussian residual s*G; each step applies
the exact five-component recursion with expectations enumerated over the
hypercube support law and Gauss-Hermite quadrature for G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .junta import JuntaProblem, PlantedInstance, Sampler
from .losses import LossSpec, squared
from .setsystem import coords_from_mask, greedy_closure


class DivergenceError(RuntimeError):
    def __init__(self, step: int, what: str = "update"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """sigma with its derivative; `bound` is a sup-norm bound K on sigma and its
    first derivatives when one exists (None for polynomial activations)."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    bound: float | None = None
    degree: int | None = None

    def __repr__(self):
        return f"Activation({self.name!r})"


def tanh_activation() -> Activation:
    return Activation("tanh", np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, bound=2.0)


def scaled_tanh(amplitude: float = 1.0, gain: float = 1.0) -> Activation:
    """sigma(x) = A tanh(g x); amplitude sets the output range, gain the slope."""
    a, g = float(amplitude), float(gain)
    return Activation(
        f"tanh[{a}x{g}]",
        f=lambda x: a * np.tanh(g * x),
        df=lambda x: a * g / np.cosh(g * x) ** 2,
        bound=max(2.0, a * g, a),
    )


def poly_activation(degree: int) -> Activation:
    """sigma(x) = (1+x)^L; Taylor coefficients m_l = l! C(L, l)."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    L = int(degree)
    return Activation(
        f"poly1p^{L}",
        f=lambda x: (1.0 + x) ** L,
        df=lambda x: L * (1.0 + x) ** (L - 1),
        degree=L,
    )


def poly_taylor_coefficients(degree: int) -> np.ndarray:
    """m_l = l! * binomial(L, l) for sigma(x) = (1+x)^L = sum_l m_l x^l / l!."""
    return np.array([math.factorial(l) * math.comb(degree, l) for l in range(degree + 1)], dtype=float)


def make_activation(spec) -> Activation:
    if isinstance(spec, Activation):
        return spec
    if spec == "tanh":
        return tanh_activation()
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "poly":
            return poly_activation(spec["L"])
        if kind == "tanh":
            return scaled_tanh(spec.get("amplitude", 1.0), spec.get("gain", 1.0))
    if isinstance(spec, str) and spec.startswith("poly:"):
        return poly_activation(int(spec.split(":", 1)[1]))
    if isinstance(spec, str) and spec.startswith("tanh:"):
        parts = spec.split(":")
        return scaled_tanh(float(parts[1]), float(parts[2]) if len(parts) > 2 else 1.0)
    raise ValueError(f"unknown activation spec {spec!r}")


# ---------------------------------------------------------------------------
# Training configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Step sizes, per-block schedules, regularization, batch size.

    eta is the base step size; each block uses eta * rate_<block>, and the
    w-block additionally multiplies per-coordinate kappa factors (in [1/2, 3/2]).
    """

    loss: LossSpec
    eta: float
    batch: int = 1
    rate_a: float = 1.0
    rate_w: float = 1.0
    rate_b: float = 1.0
    rate_c: float = 1.0
    kappa: np.ndarray | None = None
    lam_a: float = 0.0
    lam_w: float = 0.0
    lam_b: float = 0.0
    lam_c: float = 0.0

    def __post_init__(self):
        if self.kappa is not None:
            self.kappa = np.asarray(self.kappa, dtype=float)
            if np.any(self.kappa < 0.5 - 1e-12) or np.any(self.kappa > 1.5 + 1e-12):
                raise ValueError("kappa entries must lie in [1/2, 3/2]")

    def kappa_for(self, width: int) -> np.ndarray:
        if self.kappa is None:
            return np.ones(width)
        if self.kappa.size != width:
            raise ValueError(f"kappa has length {self.kappa.size}, expected {width}")
        return self.kappa


# ---------------------------------------------------------------------------
# Particle ensembles and batch SGD
# ---------------------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """Finite-width parameters theta_j = (a_j, w_j, b_j, c_j); one training run
    owns and mutates one ensemble."""

    a: np.ndarray
    w: np.ndarray  # (M, d)
    b: np.ndarray
    c: np.ndarray
    activation: Activation

    @property
    def m(self) -> int:
        return self.a.size

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """f(x) for a batch of inputs x of shape (n, d)."""
        z = x @ self.w.T + self.b
        return (self.activation.f(z) @ self.a + self.c.sum()) / self.m


def init_ensemble(
    d: int,
    m: int,
    activation: Activation,
    seed: int,
    c_bar: float = 0.0,
    mu_w: str = "zero",
    w_scale: float = 1.0,
    mu_b: str = "uniform",
    b_scale: float = 1.0,
) -> ParticleEnsemble:
    """(a0, b0, sqrt(d) w0, c0) ~ mu_a x mu_b x mu_w^d x delta_{c_bar} with
    mu_a = Unif[-1, 1]."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, m)
    if mu_b == "uniform":
        b = rng.uniform(-b_scale, b_scale, m)
    elif mu_b == "zero":
        b = np.zeros(m)
    else:
        raise ValueError(f"unknown mu_b {mu_b!r}")
    if mu_w == "zero":
        w = np.zeros((m, d))
    elif mu_w == "normal":
        w = rng.standard_normal((m, d)) * (w_scale / np.sqrt(d))
    else:
        raise ValueError(f"unknown mu_w {mu_w!r}")
    c = np.full(m, float(c_bar))
    return ParticleEnsemble(a, w, b, c, activation)


def sgd_step(ens: ParticleEnsemble, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> ParticleEnsemble:
    """One batch-SGD update: theta_j <- theta_j - H [ (1/b) sum_i l'(f(x_i), y_i)
    grad_theta sigma_*(x_i; theta_j) + lambda theta_j ], f evaluated at the
    pre-step parameters for the whole batch."""
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    n = x.shape[0]
    act = ens.activation
    z = x @ ens.w.T + ens.b  # (n, M)
    s = act.f(z)
    sp = act.df(z)
    f = (s @ ens.a + ens.c.sum()) / ens.m
    if not np.all(np.isfinite(f)):
        raise DivergenceError(-1, "network value")
    g = cfg.loss.deriv(f, np.asarray(y, dtype=float)) / n  # (n,)

    grad_a = g @ s
    asp = sp * ens.a  # broadcast over columns
    gsp = g[:, None] * asp  # (n, M)
    grad_b = gsp.sum(axis=0)
    grad_w = gsp.T @ x  # (M, d)
    grad_c = g.sum()

    eta = cfg.eta
    kap = cfg.kappa_for(ens.d)
    ens.a -= eta * cfg.rate_a * (grad_a + cfg.lam_a * ens.a)
    ens.w -= (eta * cfg.rate_w * kap) * (grad_w + cfg.lam_w * ens.w)
    ens.b -= eta * cfg.rate_b * (grad_b + cfg.lam_b * ens.b)
    ens.c -= eta * cfg.rate_c * (grad_c + cfg.lam_c * ens.c)
    if not (
        np.all(np.isfinite(ens.a))
        and np.all(np.isfinite(ens.w))
        and np.all(np.isfinite(ens.b))
        and np.all(np.isfinite(ens.c))
    ):
        raise DivergenceError(-1)
    return ens


# ---------------------------------------------------------------------------
# Dimension-free state and recursion
# ---------------------------------------------------------------------------


@dataclass
class DFState:
    """Weighted dimension-free particles (a, b, u, c, s); weights sum to 1."""

    a: np.ndarray
    b: np.ndarray
    u: np.ndarray  # (N, P)
    c: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    activation: Activation
    k: int = 0

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def p(self) -> int:
        return self.u.shape[1]

    def copy(self) -> "DFState":
        return DFState(
            self.a.copy(), self.b.copy(), self.u.copy(), self.c.copy(),
            self.s.copy(), self.weights.copy(), self.activation, self.k,
        )

    def features(self, zmat: np.ndarray, gh: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
        """E_G[sigma(<u, z> + s G + b)] for every particle x support point."""
        pre = self.u @ zmat.T + self.b[:, None]  # (N, R)
        if gh is None or np.all(self.s == 0.0):
            return self.activation.f(pre)
        nodes, wts = gh
        pre3 = pre[:, :, None] + self.s[:, None, None] * nodes
        return self.activation.f(pre3) @ wts

    def f_table(self, zmat: np.ndarray, gh=None) -> np.ndarray:
        """Network value on every support point."""
        sig = self.features(zmat, gh)
        return (self.weights * self.a) @ sig + float(self.weights @ self.c)


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E_{G ~ N(0,1)}[f(G)]."""
    nodes, wts = np.polynomial.hermite.hermgauss(n)
    return nodes * np.sqrt(2.0), wts / np.sqrt(np.pi)


def gauss_legendre_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E_{A ~ Unif[-1,1]}[f(A)]."""
    nodes, wts = np.polynomial.legendre.leggauss(n)
    return nodes, wts / 2.0


def hypercube_tables(problem: JuntaProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(Z, row weights, cond, labels) for a uniform-hypercube-backed problem."""
    if not problem.marginal.is_uniform_hypercube():
        raise ValueError("dimension-free dynamics needs X = {+1,-1} uniform")
    zmat = np.column_stack([problem.coord_values(i) for i in range(1, problem.p + 1)])
    return zmat, problem.row_weights.copy(), np.asarray(problem.cond), problem.labels_numeric()


def init_df_state(
    p: int,
    activation: Activation,
    c_bar: float = 0.0,
    a_order: int = 32,
    b_order: int = 16,
    mu_b: str = "uniform",
    s0: float = 0.0,
) -> DFState:
    """Quadrature representation of rho_0 = mu_a x mu_b x delta_0 x delta_c x delta_s0."""
    a_nodes, a_wts = gauss_legendre_unit(a_order)
    if mu_b == "uniform":
        b_nodes, b_wts = gauss_legendre_unit(b_order)
    elif mu_b == "zero":
        b_nodes, b_wts = np.zeros(1), np.ones(1)
    else:
        raise ValueError(f"unknown mu_b {mu_b!r}")
    aa, bb = np.meshgrid(a_nodes, b_nodes, indexing="ij")
    ww = np.outer(a_wts, b_wts).reshape(-1)
    n = ww.size
    return DFState(
        a=aa.reshape(-1).copy(),
        b=bb.reshape(-1).copy(),
        u=np.zeros((n, p)),
        c=np.full(n, float(c_bar)),
        s=np.full(n, float(s0)),
        weights=ww / ww.sum(),
        activation=activation,
    )


def df_step(
    state: DFState,
    problem: JuntaProblem,
    cfg: TrainConfig,
    gh_order: int = 20,
    _tables=None,
) -> DFState:
    """One step of the discrete dimension-free recursion (exact expectations)."""
    zmat, wz, cond, labels = hypercube_tables(problem) if _tables is None else _tables
    act = state.activation
    use_g = not np.all(state.s == 0.0)
    gh = gauss_hermite(gh_order) if use_g else None

    pre = state.u @ zmat.T + state.b[:, None]  # (N, R)
    if use_g:
        nodes, wts = gh
        pre3 = pre[:, :, None] + state.s[:, None, None] * nodes
        sig = act.f(pre3) @ wts
        sigp_full = act.df(pre3)
        sigp = sigp_full @ wts
        sigp_g = sigp_full @ (wts * nodes)
    else:
        sig = act.f(pre)
        sigp = act.df(pre)
        sigp_g = None

    f = (state.weights * state.a) @ sig + float(state.weights @ state.c)  # (R,)
    if not np.all(np.isfinite(f)):
        raise DivergenceError(state.k, "network value")
    ellp = cfg.loss.deriv(f[:, None], labels[None, :])  # (R, ny)
    gz = wz * np.einsum("ry,ry->r", cond, ellp)  # weighted E_{y|z}[l'] per row

    grad_a = sig @ gz
    asp = state.a[:, None] * sigp
    grad_b = asp @ gz
    grad_u = (asp * gz) @ zmat
    grad_c = float(gz.sum())
    grad_s = (state.a[:, None] * sigp_g) @ gz if use_g else np.zeros(state.n)

    eta = cfg.eta
    kap = cfg.kappa_for(state.p)
    state.a = state.a - eta * cfg.rate_a * (grad_a + cfg.lam_a * state.a)
    state.u = state.u - (eta * cfg.rate_w * kap) * (grad_u + cfg.lam_w * state.u)
    state.s = state.s - eta * cfg.rate_w * (grad_s + cfg.lam_w * state.s)
    state.b = state.b - eta * cfg.rate_b * (grad_b + cfg.lam_b * state.b)
    state.c = state.c - eta * cfg.rate_c * (grad_c + cfg.lam_c * state.c)
    state.k += 1
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.a))):
        raise DivergenceError(state.k)
    return state


@dataclass
class DFRun:
    state: DFState
    u_max: np.ndarray  # (steps+1, P) max over particles of |u_i| per step
    history: list = field(default_factory=list)


def run_df(
    problem: JuntaProblem,
    cfg: TrainConfig,
    steps: int,
    state: DFState,
    gh_order: int = 20,
    risk_every: int | None = None,
    risk_losses: Sequence[tuple[str, LossSpec]] = (),
) -> DFRun:
    tables = hypercube_tables(problem)
    u_max = np.empty((steps + 1, state.p))
    u_max[0] = np.abs(state.u).max(axis=0) if state.n else 0.0
    history = []

    def record(step):
        if risk_every is None or (step % risk_every and step != steps):
            return
        row = {"step": step, "t": step * cfg.eta}
        for name, loss in risk_losses:
            row[name] = df_risk(state, problem, loss, gh_order=gh_order)
        for i in range(state.p):
            row[f"umax_{i + 1}"] = float(u_max[step, i])
        history.append(row)

    record(0)
    for step in range(1, steps + 1):
        try:
            df_step(state, problem, cfg, gh_order=gh_order, _tables=tables)
        except DivergenceError as exc:
            raise DivergenceError(step) from exc
        u_max[step] = np.abs(state.u).max(axis=0)
        record(step)
    return DFRun(state, u_max, history)


# ---------------------------------------------------------------------------
# Support alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentReport:
    """Per-coordinate first step where max_particles |u_i| clears `threshold`;
    None marks FROZEN. u_star_mask is the leap-1-reachable set of the DLQ
    system, whose complement must stay frozen with |u_i| at roundoff scale."""

    first_activation: tuple
    max_abs_u: tuple
    u_star_mask: int
    threshold: float

    def frozen_coords(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, step in enumerate(self.first_activation) if step is None)


def support_alignment(u_history: np.ndarray, dlq_report, threshold: float = 0.01) -> AlignmentReport:
    u_history = np.asarray(u_history)
    p = u_history.shape[1]
    u_star = greedy_closure(dlq_report.system, 1, 0)
    first = []
    for i in range(p):
        hits = np.nonzero(u_history[:, i] > threshold)[0]
        first.append(int(hits[0]) if hits.size else None)
    return AlignmentReport(
        tuple(first),
        tuple(float(v) for v in u_history.max(axis=0)),
        u_star,
        threshold,
    )


# ---------------------------------------------------------------------------
# Kernels and smallest eigenvalue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelReport:
    matrix: np.ndarray
    lambda_min: float


def _power_iteration(mat: np.ndarray, tol: float, max_iter: int) -> float:
    n = mat.shape[0]
    v = 1.0 + 0.01 * np.arange(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam = float(v @ w)
        v = w / nw
        if np.linalg.norm(mat @ v - lam * v) <= tol * max(1.0, abs(lam)):
            break
    return float(v @ (mat @ v))


def smallest_eigenvalue(mat: np.ndarray, tol: float = 1e-10, max_iter: int = 50000) -> float:
    """Smallest eigenvalue of a symmetric PSD-up-to-roundoff matrix via a
    two-sided power iteration (largest of K, then largest of lam_max I - K)."""
    mat = np.asarray(mat, dtype=float)
    lam_max = _power_iteration(mat, tol, max_iter)
    if lam_max <= 0.0:
        lam_max = abs(lam_max)
        if lam_max == 0.0:
            return 0.0
    shifted = lam_max * np.eye(mat.shape[0]) - mat
    mu = _power_iteration(shifted, tol, max_iter)
    return lam_max - mu


def kernel(
    source,
    problem: JuntaProblem | None = None,
    activation: Activation | None = None,
    p: int | None = None,
    a_order: int = 64,
    gh_order: int = 20,
    tol: float = 1e-10,
) -> KernelReport:
    """Second-layer Gram kernel K(z, z') = E_a[phi_a(z) phi_a(z')] on the 2^P
    support points, with its smallest eigenvalue.

    `source` is either a DFState (features from its particles/weights) or a
    callable u(a) integrated over mu_a = Unif[-1, 1] with Gauss-Legendre nodes.
    """
    if a_order < 2:
        raise ValueError("quadrature order must be >= 2")
    if isinstance(source, DFState):
        if problem is None:
            raise ValueError("kernel from a DFState needs the problem for its support points")
        zmat, _, _, _ = hypercube_tables(problem)
        feats = source.features(zmat, gauss_hermite(gh_order))
        wts = source.weights
    else:
        if activation is None or (problem is None and p is None):
            raise ValueError("kernel from u(a) needs an activation and P (or a problem)")
        if problem is not None:
            zmat, _, _, _ = hypercube_tables(problem)
        else:
            r = np.arange(2**p)
            zmat = 1.0 - 2.0 * ((r[:, None] >> np.arange(p)) & 1)
        nodes, wts = gauss_legendre_unit(a_order)
        umat = np.vstack([np.asarray(source(a), dtype=float) for a in nodes])
        feats = activation.f(umat @ zmat.T)
    mat = (feats * wts[:, None]).T @ feats
    mat = (mat + mat.T) / 2.0
    return KernelReport(mat, smallest_eigenvalue(mat, tol=tol))


# ---------------------------------------------------------------------------
# Risk functionals
# ---------------------------------------------------------------------------


def df_risk(state: DFState, problem: JuntaProblem, loss: LossSpec, gh_order: int = 20) -> float:
    """Exact risk of a dimension-free model (depends on x only through z)."""
    zmat, wz, cond, labels = hypercube_tables(problem)
    f = state.f_table(zmat, gauss_hermite(gh_order) if not np.all(state.s == 0.0) else None)
    lv = loss.value(f[:, None], labels[None, :])
    return float(wz @ np.einsum("ry,ry->r", cond, lv))


def ensemble_risk_mc(
    ens: ParticleEnsemble,
    sampler: Sampler,
    loss: LossSpec,
    n: int,
) -> tuple[float, float]:
    """Monte-Carlo risk of a full-width model with the label average taken
    exactly (only the x-randomness is sampled); returns (estimate, std error)."""
    problem = sampler.instance.problem
    labels = problem.labels_numeric()
    _, x, rows = sampler.draw_batch(n)
    f = ens.forward(x)
    lv = loss.value(f[:, None], labels[None, :])
    per_sample = np.einsum("ny,ny->n", problem.cond[rows], lv)
    return float(per_sample.mean()), float(per_sample.std(ddof=1) / np.sqrt(n))


def bayes_risk(
    problem: JuntaProblem,
    loss: LossSpec,
    grid: int = 512,
    refine_tol: float = 1e-10,
) -> tuple[float, np.ndarray]:
    """inf_f E[l(f(z), y)] with the per-z minimization done on a grid plus
    golden-section refinement; returns (risk, per-row minimizers)."""
    labels = problem.labels_numeric()
    span = float(labels.max() - labels.min()) if labels.size > 1 else 1.0
    lo = float(labels.min()) - 0.5 * span - 1.0
    hi = float(labels.max()) + 0.5 * span + 1.0
    us = np.linspace(lo, hi, grid)
    lv = loss.value(us[:, None], labels[None, :])  # (grid, ny)
    objective = lv @ problem.cond.T  # (grid, rows)
    best = np.argmin(objective, axis=0)

    gr = (np.sqrt(5.0) - 1.0) / 2.0
    minimizers = np.empty(problem.n_rows)
    values = np.empty(problem.n_rows)
    for r in range(problem.n_rows):
        row = problem.cond[r]

        def g(u):
            return float(row @ loss.value(u, labels))

        a = us[max(best[r] - 1, 0)]
        b = us[min(best[r] + 1, grid - 1)]
        x1 = b - gr * (b - a)
        x2 = a + gr * (b - a)
        g1, g2 = g(x1), g(x2)
        while b - a > refine_tol:
            if g1 <= g2:
                b, x2, g2 = x2, x1, g1
                x1 = b - gr * (b - a)
                g1 = g(x1)
            else:
                a, x1, g1 = x1, x2, g2
                x2 = a + gr * (b - a)
                g2 = g(x2)
        u_star = (a + b) / 2.0
        minimizers[r] = u_star
        values[r] = g(u_star)
    return float(problem.row_weights @ values), minimizers


def risk(model, problem, loss: LossSpec, *, sampler: Sampler | None = None, n: int = 10_000):
    """Risk of a model: exact for DF models, Monte-Carlo (with standard error)
    for full-width ensembles."""
    if isinstance(model, DFState):
        return df_risk(model, problem, loss)
    if isinstance(model, ParticleEnsemble):
        if sampler is None:
            raise ValueError("ensemble risk needs a sampler (Monte-Carlo mode)")
        return ensemble_risk_mc(model, sampler, loss, n)
    raise TypeError(f"unsupported model type {type(model)!r}")


def excess_risk(model, problem, loss: LossSpec, *, sampler=None, n: int = 10_000):
    base, _ = bayes_risk(problem, loss)
    r = risk(model, problem, loss, sampler=sampler, n=n)
    if isinstance(r, tuple):
        return r[0] - base, r[1]
    return r - base


# ---------------------------------------------------------------------------
# SGD driver
# ---------------------------------------------------------------------------


@dataclass
class SgdRun:
    ensemble: ParticleEnsemble
    history: list


def run_sgd(
    instance: PlantedInstance,
    ens: ParticleEnsemble,
    cfg: TrainConfig,
    steps: int,
    data_seed: int = 0,
    eval_every: int | None = None,
    test_n: int = 10_000,
    test_seed: int = 10**6,
    eval_losses: Sequence[tuple[str, LossSpec]] = (("mse", squared()),),
) -> SgdRun:
    """Online/batch SGD with periodic test-risk evaluation on a fixed fresh
    sample (labels averaged exactly). Inputs are consumed in the sampler's
    internal support-first layout, making the whole trajectory invariant to
    ambient coordinate relabeling."""
    sampler = instance.sampler(data_seed)
    test_sampler = instance.sampler(test_seed)
    _, x_test, rows_test = test_sampler.draw_batch(test_n)
    problem = instance.problem
    labels = problem.labels_numeric()
    cond_test = problem.cond[rows_test]
    history = []

    def evaluate(step):
        row = {"step": step, "t": step * cfg.eta}
        f = ens.forward(x_test)
        for name, loss in eval_losses:
            lv = loss.value(f[:, None], labels[None, :])
            per = np.einsum("ny,ny->n", cond_test, lv)
            row[name] = float(per.mean())
            row[f"{name}_se"] = float(per.std(ddof=1) / np.sqrt(test_n))
        history.append(row)

    evaluate(0)
    for step in range(1, steps + 1):
        y, x, _ = sampler.draw_batch(cfg.batch)
        try:
            sgd_step(ens, x, y, cfg)
        except DivergenceError:
            raise DivergenceError(step)
        if eval_every is not None and (step % eval_every == 0 or step == steps):
            evaluate(step)
    return SgdRun(ens, history)


# ---------------------------------------------------------------------------
# Layer-wise trainer (first layer, then second layer)
# ---------------------------------------------------------------------------


@dataclass
class LayerwiseResult:
    state: DFState
    kernel_report: KernelReport
    history: list
    eta2: float
    trust_violation: bool


def second_derivative_bound(loss: LossSpec, labels: np.ndarray, u_lo: float, u_hi: float) -> float:
    """Numeric sup of |d/du l'(u, y)| over a grid, with headroom."""
    us = np.linspace(u_lo, u_hi, 2001)
    h = max(1e-6, 1e-6 * (u_hi - u_lo))
    d2 = (loss.deriv(us[:, None] + h, labels[None, :]) - loss.deriv(us[:, None] - h, labels[None, :])) / (2 * h)
    return 1.5 * float(np.max(np.abs(d2))) + 1e-12


def layerwise_train(
    problem: JuntaProblem,
    cfg: TrainConfig,
    L: int,
    k1: int | None = None,
    k2: int = 500,
    c_bar: float = 0.0,
    a_order: int = 64,
    eta2: float | str = "auto",
    lambda_min_threshold: float = 1e-6,
) -> LayerwiseResult:
    """Two-phase training of the dimension-free model with sigma(x) = (1+x)^L:
    Phase 1 trains only the first-layer weights u with per-coordinate rates
    eta*kappa_i for k1 (= P by default) steps; Phase 2 trains only the second
    layer a. The returned kernel report certifies lambda_min(K^{k1}) numerically.
    """
    act = poly_activation(L)
    if k1 is None:
        k1 = problem.p
    state = init_df_state(problem.p, act, c_bar=c_bar, a_order=a_order, mu_b="zero")
    tables = hypercube_tables(problem)

    phase1 = TrainConfig(
        loss=cfg.loss, eta=cfg.eta, rate_a=0.0, rate_w=1.0, rate_b=0.0, rate_c=0.0,
        kappa=cfg.kappa, lam_w=cfg.lam_w,
    )
    trust_violation = False
    for step in range(1, k1 + 1):
        df_step(state, problem, phase1, _tables=tables)
        if np.abs(state.u).sum(axis=1).max() > 0.5:
            trust_violation = True

    report = kernel(state, problem)

    labels = tables[3]
    if eta2 == "auto":
        feats = state.features(tables[0])
        m = (np.sqrt(state.weights)[:, None] * feats * tables[1]) @ (feats.T * np.sqrt(state.weights))
        lam_feat = _power_iteration((m + m.T) / 2.0, 1e-10, 50000)
        f0 = state.f_table(tables[0])
        spread = float(np.max(np.abs(f0))) + float(np.max(np.abs(labels))) + 1.0
        h_smooth = second_derivative_bound(cfg.loss, labels, -spread, spread) * max(lam_feat, 1e-12)
        eta2_val = 1.0 / h_smooth
    else:
        eta2_val = float(eta2)

    base, _ = bayes_risk(problem, cfg.loss)
    phase2 = TrainConfig(
        loss=cfg.loss, eta=eta2_val, rate_a=1.0, rate_w=0.0, rate_b=0.0, rate_c=0.0,
        lam_a=cfg.lam_a,
    )
    history = [{
        "step": 0, "phase": 2, "excess": df_risk(state, problem, cfg.loss) - base,
        "lambda_min": report.lambda_min,
    }]
    for step in range(1, k2 + 1):
        df_step(state, problem, phase2, _tables=tables)
        history.append({
            "step": step, "phase": 2,
            "excess": df_risk(state, problem, cfg.loss) - base,
            "lambda_min": report.lambda_min,
        })
    return LayerwiseResult(state, report, history, eta2_val, trust_violation)
