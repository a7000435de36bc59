"""Self-contained log-barrier interior-point solver for smooth convex programs.

Solves
    maximize    f(x)                (f concave, smooth)
    subject to  g_i(x) <= 0         (each g_i convex, smooth)
                A_eq x  = b_eq
                l <= x <= u         (optional box)

with a classic barrier method: Newton inner iterations with backtracking
line search on the centering objective, and an outer schedule that grows the
barrier parameter by a factor of 10 until the duality-gap estimate m/t drops
below the requested tolerance. Infeasible starts are handled by an internal
single-slack phase-I problem (minimize s subject to g_i(x) <= s) that stops
as soon as s goes negative.

Complex decision variables are handled by callers through real stacking:
a complex vector z of length n becomes the real vector
[Re z_0, Im z_0, Re z_1, Im z_1, ...] of length 2n. This convention is fixed
repo-wide; `inner_product_rows` builds the 2 x 2n map whose rows give the
real and imaginary parts of h^H w, so |h^H w|^2 = ||G w_real||^2.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

__all__ = [
    "Status",
    "SolveReport",
    "Objective",
    "linear_objective",
    "log_sum_objective",
    "quadratic_objective",
    "BoxBounds",
    "LinearInequalities",
    "ConvexQuadratic",
    "SmoothConstraint",
    "ConvexSubproblem",
    "solve_convex",
    "complex_to_real",
    "real_to_complex",
    "inner_product_rows",
]


# real stacking convention ------------------------------------------------

def complex_to_real(z: np.ndarray) -> np.ndarray:
    """Interleave a complex vector into [Re z0, Im z0, Re z1, Im z1, ...]."""
    out = np.empty(2 * z.shape[0])
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def real_to_complex(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def inner_product_rows(h: np.ndarray) -> np.ndarray:
    """Rows G such that G @ w_real = [Re(h^H w), Im(h^H w)]."""
    n = h.shape[0]
    g = np.empty((2, 2 * n))
    g[0, 0::2] = h.real
    g[0, 1::2] = h.imag
    g[1, 0::2] = -h.imag
    g[1, 1::2] = h.real
    return g


# problem description ------------------------------------------------------

@dataclass
class Objective:
    """Concave objective via value/gradient/Hessian callbacks.

    `hess` may return either a dense (n, n) array or a length-n diagonal.
    """

    value: callable
    grad: callable
    hess: callable


def linear_objective(c: np.ndarray) -> Objective:
    c = np.asarray(c, dtype=float)
    zero = np.zeros(c.shape[0])
    return Objective(
        value=lambda x: float(c @ x),
        grad=lambda x: c,
        hess=lambda x: zero,
    )


def log_sum_objective(dim: int, indices: np.ndarray, weights: np.ndarray,
                      linear: np.ndarray | None = None) -> Objective:
    """f(x) = sum_i w_i * ln(1 + x_idx_i) (+ optional linear term)."""
    idx = np.asarray(indices, dtype=int)
    w = np.asarray(weights, dtype=float)
    lin = None if linear is None else np.asarray(linear, dtype=float)

    def value(x):
        v = float(np.sum(w * np.log1p(x[idx])))
        return v + (float(lin @ x) if lin is not None else 0.0)

    def grad(x):
        g = np.zeros(dim)
        np.add.at(g, idx, w / (1.0 + x[idx]))
        if lin is not None:
            g += lin
        return g

    def hess(x):
        d = np.zeros(dim)
        np.add.at(d, idx, -w / (1.0 + x[idx]) ** 2)
        return d

    return Objective(value=value, grad=grad, hess=hess)


def quadratic_objective(q_mat: np.ndarray, c: np.ndarray) -> Objective:
    """f(x) = -0.5 x^T Q x + c^T x with Q positive semidefinite."""
    q_mat = np.asarray(q_mat, dtype=float)
    c = np.asarray(c, dtype=float)
    return Objective(
        value=lambda x: float(-0.5 * x @ (q_mat @ x) + c @ x),
        grad=lambda x: -(q_mat @ x) + c,
        hess=lambda x: -q_mat,
    )


@dataclass
class BoxBounds:
    lower: np.ndarray  # -inf entries for unbounded
    upper: np.ndarray

    @classmethod
    def unbounded(cls, dim: int) -> "BoxBounds":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))


@dataclass
class LinearInequalities:
    """Rows a_i^T x <= b_i, stored sparse for cheap barrier assembly."""

    a_mat: sp.csr_matrix
    rhs: np.ndarray

    def __post_init__(self):
        self.a_mat = sp.csr_matrix(self.a_mat)
        self.rhs = np.asarray(self.rhs, dtype=float)

    @property
    def num(self) -> int:
        return self.a_mat.shape[0]


@dataclass
class ConvexQuadratic:
    """One constraint ||F x||^2 + q^T x + r0 <= 0 (F may be None for affine)."""

    f_mat: np.ndarray | sp.spmatrix | None
    q: np.ndarray
    r0: float
    _ftf2: object = field(default=None, repr=False)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.f_mat is not None and self._ftf2 is None:
            if sp.issparse(self.f_mat):
                self._ftf2 = (2.0 * (self.f_mat.T @ self.f_mat)).tocsr()
            else:
                self.f_mat = np.asarray(self.f_mat, dtype=float)
                self._ftf2 = 2.0 * (self.f_mat.T @ self.f_mat)

    def value(self, x: np.ndarray) -> float:
        v = float(self.q @ x) + self.r0
        if self.f_mat is not None:
            fx = self.f_mat @ x
            v += float(fx @ fx)
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.q.copy()
        if self.f_mat is not None:
            g = g + self._ftf2 @ x
        return np.asarray(g).ravel()

    def hess_term(self):
        """Constant Hessian 2 F^T F (dense, sparse, or None)."""
        return self._ftf2


@dataclass
class SmoothConstraint:
    """Generic convex constraint g(x) <= 0 via callbacks."""

    value: callable
    grad: callable
    hess: callable


@dataclass
class ConvexSubproblem:
    dim: int
    objective: Objective
    box: BoxBounds | None = None
    linear: LinearInequalities | None = None
    quadratics: list = field(default_factory=list)
    smooth: list = field(default_factory=list)
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    debug_psd_checks: bool = False

    def num_inequalities(self) -> int:
        m = len(self.quadratics) + len(self.smooth)
        if self.linear is not None:
            m += self.linear.num
        if self.box is not None:
            m += int(np.isfinite(self.box.lower).sum())
            m += int(np.isfinite(self.box.upper).sum())
        return m


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolveReport:
    status: Status
    x: np.ndarray | None
    objective: float
    kkt_stationarity: float
    kkt_primal: float
    kkt_gap: float
    iterations: int
    barrier_stages: int
    wall_time_s: float
    phase1_used: bool
    message: str = ""
    final_t: float = 0.0  # last barrier parameter, usable as a warm t0


# solver internals ---------------------------------------------------------

class _Workspace:
    def __init__(self, p: ConvexSubproblem):
        self.p = p
        self.n = p.dim
        box = p.box
        if box is not None:
            self.lo_idx = np.where(np.isfinite(box.lower))[0]
            self.up_idx = np.where(np.isfinite(box.upper))[0]
            self.lo = box.lower[self.lo_idx]
            self.up = box.upper[self.up_idx]
        else:
            self.lo_idx = np.empty(0, dtype=int)
            self.up_idx = np.empty(0, dtype=int)
            self.lo = np.empty(0)
            self.up = np.empty(0)
        self.m = p.num_inequalities()
        self.diag = np.arange(self.n)
        if p.a_eq is not None:
            self.a_eq = np.atleast_2d(np.asarray(p.a_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(p.b_eq, dtype=float))
        else:
            self.a_eq = None
            self.b_eq = None

    def slack_min(self, x: np.ndarray) -> float:
        """Smallest inequality slack; <= 0 means x is not strictly feasible."""
        worst = np.inf
        if self.lo_idx.size:
            worst = min(worst, float(np.min(x[self.lo_idx] - self.lo)))
        if self.up_idx.size:
            worst = min(worst, float(np.min(self.up - x[self.up_idx])))
        lin = self.p.linear
        if lin is not None and lin.num:
            worst = min(worst, float(np.min(lin.rhs - lin.a_mat @ x)))
        for con in self.p.quadratics:
            worst = min(worst, -con.value(x))
        for con in self.p.smooth:
            worst = min(worst, -con.value(x))
        return worst

    def max_violation(self, x: np.ndarray) -> float:
        return max(0.0, -self.slack_min(x))

    def phi(self, x: np.ndarray, t: float) -> float:
        """Centering objective -t f(x) + barrier(x); +inf outside the interior."""
        val = -t * self.p.objective.value(x)
        if self.lo_idx.size:
            s = x[self.lo_idx] - self.lo
            if np.any(s <= 0):
                return np.inf
            val -= float(np.sum(np.log(s)))
        if self.up_idx.size:
            s = self.up - x[self.up_idx]
            if np.any(s <= 0):
                return np.inf
            val -= float(np.sum(np.log(s)))
        lin = self.p.linear
        if lin is not None and lin.num:
            s = lin.rhs - lin.a_mat @ x
            if np.any(s <= 0):
                return np.inf
            val -= float(np.sum(np.log(s)))
        for con in self.p.quadratics:
            s = -con.value(x)
            if s <= 0:
                return np.inf
            val -= np.log(s)
        for con in self.p.smooth:
            s = -con.value(x)
            if s <= 0:
                return np.inf
            val -= np.log(s)
        return val

    def grad_hess(self, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        grad = -t * self.p.objective.grad(x)
        hobj = self.p.objective.hess(x)
        if np.ndim(hobj) == 1:
            hess = np.zeros((n, n))
            hess[self.diag, self.diag] = -t * hobj
        else:
            hess = -t * np.asarray(hobj, dtype=float)
            hess = np.ascontiguousarray(hess)
        if self.lo_idx.size:
            s = x[self.lo_idx] - self.lo
            grad[self.lo_idx] -= 1.0 / s
            hess[self.lo_idx, self.lo_idx] += 1.0 / s**2
        if self.up_idx.size:
            s = self.up - x[self.up_idx]
            grad[self.up_idx] += 1.0 / s
            hess[self.up_idx, self.up_idx] += 1.0 / s**2
        lin = self.p.linear
        if lin is not None and lin.num:
            s = lin.rhs - lin.a_mat @ x
            grad += lin.a_mat.T @ (1.0 / s)
            weighted = lin.a_mat.multiply((1.0 / s**2)[:, None])
            hess += (lin.a_mat.T @ weighted).toarray()
        for con in self.p.quadratics:
            s = -con.value(x)
            gcon = con.grad(x)
            grad += gcon / s
            hess += np.outer(gcon / s, gcon / s)
            ftf2 = con.hess_term()
            if ftf2 is not None:
                if sp.issparse(ftf2):
                    hess += (ftf2 / s).toarray()
                else:
                    hess += ftf2 / s
        for con in self.p.smooth:
            s = -con.value(x)
            gcon = np.asarray(con.grad(x), dtype=float)
            grad += gcon / s
            hess += np.outer(gcon / s, gcon / s)
            hcon = np.asarray(con.hess(x), dtype=float)
            if hcon.ndim == 1:
                hess[self.diag, self.diag] += hcon / s
            else:
                hess += hcon / s
        return grad, hess


def _solve_kkt(hess, grad, a_eq):
    """Newton direction for min 0.5 dx^T H dx + g^T dx s.t. A dx = 0."""
    n = hess.shape[0]
    ridge = 0.0
    scale = max(1.0, float(np.trace(hess)) / n)
    for attempt in range(8):
        try:
            factor = cho_factor(
                hess if ridge == 0.0 else hess + ridge * np.eye(n),
                lower=True, check_finite=False,
            )
            break
        except LinAlgError:
            ridge = scale * 10.0 ** (attempt - 12)
    else:
        return None, None
    if a_eq is None:
        dx = cho_solve(factor, -grad, check_finite=False)
        return dx, None
    rhs = np.column_stack([-grad, a_eq.T])
    sol = cho_solve(factor, rhs, check_finite=False)
    y0 = sol[:, 0]
    y1 = sol[:, 1:]
    schur = a_eq @ y1
    try:
        nu = np.linalg.solve(schur, a_eq @ y0)
    except np.linalg.LinAlgError:
        nu, *_ = lstsq(schur, a_eq @ y0)
    dx = y0 - y1 @ nu
    return dx, nu


def _newton_center(ws: _Workspace, x: np.ndarray, t: float, cap: int):
    """Newton iterations on the centering problem at barrier parameter t.

    Returns (x, nu, steps, converged_flag, last_decrement_sq).
    """
    nu = None
    lam2 = np.inf
    eps = 1e-10
    for k in range(cap):
        grad, hess = ws.grad_hess(x, t)
        dx, nu = _solve_kkt(hess, grad, ws.a_eq)
        if dx is None:
            return x, nu, k, False, lam2
        lam2 = float(dx @ (hess @ dx))
        if lam2 / 2.0 <= eps:
            return x, nu, k + 1, True, lam2
        # backtracking line search, keeping the iterate strictly feasible
        phi0 = ws.phi(x, t)
        slope = float(grad @ dx)
        alpha = 1.0
        accepted = False
        noise = 1e-12 * (1.0 + abs(phi0))
        for _ in range(60):
            x_new = x + alpha * dx
            phi_new = ws.phi(x_new, t)
            if phi_new <= phi0 + 0.01 * alpha * slope + noise:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # step is below line-search resolution; treat a small decrement
            # as converged, otherwise report a stall
            return x, nu, k + 1, lam2 / 2.0 <= 1e-4, lam2
        x = x_new
    return x, nu, cap, lam2 / 2.0 <= 1e-4, lam2


def _lift_phase1(p: ConvexSubproblem, anchor: np.ndarray) -> ConvexSubproblem:
    """Phase-I problem over (x, s): minimize s subject to g_i(x) <= s.

    A tiny proximal term around the starting point keeps the barrier
    centering problem bounded (without it, directions that only loosen
    constraints would drive the barrier to -inf and Newton would chase
    them forever).
    """
    n = p.dim
    rows = []
    rhs = []
    if p.box is not None:
        lo_idx = np.where(np.isfinite(p.box.lower))[0]
        up_idx = np.where(np.isfinite(p.box.upper))[0]
        for i in lo_idx:
            r = sp.lil_matrix((1, n + 1))
            r[0, i] = -1.0
            r[0, n] = -1.0
            rows.append(r)
            rhs.append(-p.box.lower[i])
        for i in up_idx:
            r = sp.lil_matrix((1, n + 1))
            r[0, i] = 1.0
            r[0, n] = -1.0
            rows.append(r)
            rhs.append(p.box.upper[i])
    if p.linear is not None and p.linear.num:
        ext = sp.hstack(
            [p.linear.a_mat, -np.ones((p.linear.num, 1))], format="csr"
        )
        rows.append(ext)
        rhs.extend(p.linear.rhs.tolist())
    lin = None
    if rows:
        a_mat = sp.vstack(rows, format="csr")
        lin = LinearInequalities(a_mat, np.asarray(rhs))
    quads = []
    for con in p.quadratics:
        f_ext = None
        if con.f_mat is not None:
            if sp.issparse(con.f_mat):
                f_ext = sp.hstack([con.f_mat, sp.csr_matrix((con.f_mat.shape[0], 1))])
            else:
                f_ext = np.hstack([con.f_mat, np.zeros((con.f_mat.shape[0], 1))])
        q_ext = np.append(con.q, -1.0)
        quads.append(ConvexQuadratic(f_ext, q_ext, con.r0))
    smooth = []
    for con in p.smooth:
        def mk(c):
            def val(z):
                return c.value(z[:-1]) - z[-1]

            def grad(z):
                g = np.append(np.asarray(c.grad(z[:-1]), dtype=float), -1.0)
                return g

            def hess(z):
                h = np.asarray(c.hess(z[:-1]), dtype=float)
                if h.ndim == 1:
                    return np.append(h, 0.0)
                out = np.zeros((z.shape[0], z.shape[0]))
                out[:-1, :-1] = h
                return out

            return SmoothConstraint(val, grad, hess)

        smooth.append(mk(con))
    a_eq = None
    b_eq = None
    if p.a_eq is not None:
        a_eq = np.hstack([np.atleast_2d(p.a_eq), np.zeros((np.atleast_2d(p.a_eq).shape[0], 1))])
        b_eq = p.b_eq
    box = BoxBounds.unbounded(n + 1)
    box.lower[n] = -2.0  # keeps phase-I bounded; any s < 0 suffices
    mu = 1e-8
    a = np.asarray(anchor, dtype=float)

    def value(z):
        return -z[n] - mu * float(np.sum((z[:n] - a) ** 2))

    def grad(z):
        g = np.zeros(n + 1)
        g[n] = -1.0
        g[:n] = -2.0 * mu * (z[:n] - a)
        return g

    def hess(z):
        d = np.full(n + 1, -2.0 * mu)
        d[n] = 0.0
        return d

    return ConvexSubproblem(
        dim=n + 1, objective=Objective(value, grad, hess), box=box, linear=lin,
        quadratics=quads, smooth=smooth, a_eq=a_eq, b_eq=b_eq,
    )


def _debug_psd_spotcheck(p: ConvexSubproblem, x: np.ndarray) -> None:
    h = p.objective.hess(x)
    h = np.diag(h) if np.ndim(h) == 1 else np.asarray(h)
    w = np.linalg.eigvalsh(0.5 * (h + h.T))
    if w.max() > 1e-7 * max(1.0, abs(w).max()):
        raise AssertionError("objective Hessian is not negative semidefinite")
    for con in list(p.quadratics) + list(p.smooth):
        if isinstance(con, ConvexQuadratic):
            term = con.hess_term()
            if term is None:
                continue
            term = term.toarray() if sp.issparse(term) else term
        else:
            term = con.hess(x)
            term = np.diag(term) if np.ndim(term) == 1 else np.asarray(term)
        w = np.linalg.eigvalsh(0.5 * (term + term.T))
        if w.min() < -1e-7 * max(1.0, abs(w).max()):
            raise AssertionError("constraint Hessian is not positive semidefinite")


def solve_convex(
    problem: ConvexSubproblem,
    x0: np.ndarray,
    tol: float = 1e-7,
    max_iter: int = 4000,
    *,
    t0: float | None = None,
    theta: float = 10.0,
    max_newton_per_stage: int = 50,
    early_stop=None,
    _allow_phase1: bool = True,
) -> SolveReport:
    """Barrier solve of a ConvexSubproblem from (possibly infeasible) x0."""
    start = time.perf_counter()
    ws = _Workspace(problem)
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({problem.dim},)")
    if problem.debug_psd_checks:
        _debug_psd_spotcheck(problem, x)
    if ws.a_eq is not None:
        resid = ws.b_eq - ws.a_eq @ x
        if np.max(np.abs(resid)) > 1e-11:
            corr, *_ = lstsq(ws.a_eq, resid)
            x = x + corr
    phase1_used = False
    total_iters = 0
    if ws.slack_min(x) <= 0.0:
        if not _allow_phase1:
            return SolveReport(
                Status.INFEASIBLE, None, -np.inf, np.inf, ws.max_violation(x),
                np.inf, 0, 0, time.perf_counter() - start, False,
                "x0 infeasible and phase-I disabled",
            )
        lifted = _lift_phase1(problem, x)
        s0 = ws.max_violation(x) + 1.0
        z0 = np.append(x, s0)
        rep1 = solve_convex(
            lifted, z0, tol=1e-6, max_iter=max_iter, t0=1.0, theta=theta,
            max_newton_per_stage=max_newton_per_stage,
            early_stop=lambda z: z[-1] < -1e-6,
            _allow_phase1=False,
        )
        total_iters += rep1.iterations
        if rep1.x is None or rep1.x[-1] >= 0.0:
            return SolveReport(
                Status.INFEASIBLE, None, -np.inf, np.inf,
                rep1.x[-1] if rep1.x is not None else np.inf, np.inf,
                total_iters, rep1.barrier_stages,
                time.perf_counter() - start, True, "phase-I found no interior point",
            )
        x = rep1.x[:-1]
        phase1_used = True
        if ws.slack_min(x) <= 0.0:
            return SolveReport(
                Status.NUMERICAL_FAILURE, None, -np.inf, np.inf,
                ws.max_violation(x), np.inf, total_iters, rep1.barrier_stages,
                time.perf_counter() - start, True,
                "phase-I point lost strict feasibility",
            )

    m = ws.m
    t = float(t0) if t0 else max(1.0, m / 100.0)
    stages = 0
    nu = None
    status = Status.OPTIMAL
    message = ""
    while True:
        stages += 1
        x, nu, k, ok, lam2 = _newton_center(
            ws, x, t, min(max_newton_per_stage, max(1, max_iter - total_iters))
        )
        total_iters += k
        if not ok and lam2 / 2.0 > 1e-4:
            status = Status.NUMERICAL_FAILURE
            message = f"newton stalled at decrement^2/2 = {lam2 / 2:.2e}"
            break
        if early_stop is not None and early_stop(x):
            break
        if m == 0 or m / t <= tol:
            break
        if total_iters >= max_iter:
            status = Status.ITERATION_LIMIT
            message = "newton iteration budget exhausted"
            break
        t *= theta

    obj = problem.objective.value(x)
    grad_f = problem.objective.grad(x)
    grad_phi, _ = ws.grad_hess(x, t)
    if ws.a_eq is not None and nu is not None:
        stat = grad_phi + ws.a_eq.T @ nu
    else:
        stat = grad_phi
    kkt_stationarity = float(np.max(np.abs(stat)) / t) if m or ws.a_eq is not None else float(np.max(np.abs(grad_f)))
    kkt_primal = ws.max_violation(x)
    if ws.a_eq is not None:
        kkt_primal = max(kkt_primal, float(np.max(np.abs(ws.a_eq @ x - ws.b_eq))))
    gap = m / t if m else 0.0
    if status is Status.OPTIMAL and kkt_primal > tol:
        status = Status.NUMERICAL_FAILURE
        message = f"primal residual {kkt_primal:.2e} above tolerance"
    return SolveReport(
        status=status,
        x=x,
        objective=float(obj),
        kkt_stationarity=kkt_stationarity,
        kkt_primal=kkt_primal,
        kkt_gap=float(gap),
        iterations=total_iters,
        barrier_stages=stages,
        wall_time_s=time.perf_counter() - start,
        phase1_used=phase1_used,
        message=message,
        final_t=float(t),
    )
