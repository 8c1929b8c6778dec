"""Embedded convex QP solver, sequential-convexification NLP solver, and
finite-difference utilities.

The QP solver is an operator-splitting method: over-relaxed ADMM on the
splitting (x, Ax) with a quasi-definite KKT factorization, adaptive penalty,
and an active-set polishing step that sharpens the returned point to near
machine precision.  The NLP solver linearizes the constraints about the
current iterate, solves an L1-penalized trust-region QP subproblem, and
accepts steps by an exact-penalty merit test.  Both are deterministic:
identical inputs produce identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class SolveReport:
    """Outcome of a solver call.

    `violation` is always recomputed from the returned point, never taken
    from solver internals.
    """

    status: str
    iterations: int
    violation: float
    cost: float
    kkt_residual: float = float("nan")
    stationarity: float = float("nan")
    violation_history: list = field(default_factory=list)
    duals: Optional[np.ndarray] = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class QpProblem:
    """min 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  lb <= A_in x <= ub.

    H must be symmetric PSD; matrices may be dense or scipy sparse.
    """

    H: object
    g: np.ndarray
    A_eq: object = None
    b_eq: Optional[np.ndarray] = None
    A_in: object = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def stacked(self):
        """Return (A, l, u) with equality rows first; A is csc."""
        n = len(self.g)
        blocks, lo, hi = [], [], []
        if self.A_eq is not None and np.size(self.b_eq) > 0:
            blocks.append(sp.csc_matrix(self.A_eq))
            lo.append(np.asarray(self.b_eq, dtype=float))
            hi.append(np.asarray(self.b_eq, dtype=float))
        if self.A_in is not None and sp.csc_matrix(self.A_in).shape[0] > 0:
            a = sp.csc_matrix(self.A_in)
            blocks.append(a)
            lo.append(np.full(a.shape[0], -np.inf) if self.lb is None
                      else np.asarray(self.lb, dtype=float))
            hi.append(np.full(a.shape[0], np.inf) if self.ub is None
                      else np.asarray(self.ub, dtype=float))
        if not blocks:
            return sp.csc_matrix((0, n)), np.zeros(0), np.zeros(0)
        return (sp.vstack(blocks, format="csc"),
                np.concatenate(lo), np.concatenate(hi))


def _symmetry_defect(H) -> float:
    Hc = sp.csc_matrix(H)
    return abs(Hc - Hc.T).max() if Hc.nnz else 0.0


def qp_cost(p: QpProblem, x: np.ndarray) -> float:
    Hx = sp.csc_matrix(p.H) @ x
    return float(0.5 * np.dot(x, Hx) + np.dot(p.g, x))


def _constraint_violation(A, l, u, x) -> float:
    if A.shape[0] == 0:
        return 0.0
    ax = A @ x
    return float(max(0.0, np.max(ax - u), np.max(l - ax)))


def _kkt_residual(H, g, A, l, u, x, y):
    """(max KKT residual, primal violation) at (x, y)."""
    r_stat = float(np.max(np.abs(H @ x + g + (A.T @ y if A.shape[0] else 0.0))))
    r_prim = _constraint_violation(A, l, u, x)
    r_comp = 0.0
    if A.shape[0]:
        ax = A @ x
        yp = np.maximum(y, 0.0)
        ym = np.minimum(y, 0.0)
        gap_up = np.abs(np.where(np.isfinite(u), u, ax) - ax)
        gap_lo = np.abs(ax - np.where(np.isfinite(l), l, ax))
        comp_up = np.where(np.isfinite(u), yp * gap_up, yp)
        comp_lo = np.where(np.isfinite(l), -ym * gap_lo, -ym)
        r_comp = float(max(np.max(comp_up, initial=0.0),
                           np.max(comp_lo, initial=0.0)))
    return max(r_stat, r_prim, r_comp), r_prim


class _AdmmCore:
    """Shared factorization and iteration state for one stacked QP."""

    def __init__(self, H, g, A, l, u, rho_bar=0.1, sigma=1e-6, alpha=1.6):
        self.H, self.g, self.A, self.l, self.u = H, g, A, l, u
        self.n, self.m = H.shape[0], A.shape[0]
        self.sigma, self.alpha = sigma, alpha
        self.rho_bar = rho_bar
        self._set_rho()
        self._factorize()

    def _set_rho(self):
        eq = np.isfinite(self.l) & np.isfinite(self.u) & (self.l == self.u)
        self.rho = np.where(eq, 1e3 * self.rho_bar, self.rho_bar)

    def _factorize(self):
        Ih = sp.identity(self.n, format="csc")
        if self.m:
            K = sp.bmat(
                [[self.H + self.sigma * Ih, self.A.T],
                 [self.A, -sp.diags(1.0 / self.rho)]], format="csc")
        else:
            K = sp.csc_matrix(self.H + self.sigma * Ih)
        self.lu = spla.splu(K)

    def update_rho(self, scale):
        self.rho_bar = float(np.clip(self.rho_bar * scale, 1e-6, 1e6))
        self._set_rho()
        self._factorize()

    def step(self, x, z, y):
        rhs = np.concatenate((self.sigma * x - self.g, z - y / self.rho))
        sol = self.lu.solve(rhs)
        x_t, nu = sol[:self.n], sol[self.n:]
        z_t = z + (nu - y) / self.rho
        x_new = self.alpha * x_t + (1 - self.alpha) * x
        z_mix = self.alpha * z_t + (1 - self.alpha) * z
        z_new = np.clip(z_mix + y / self.rho, self.l, self.u)
        y_new = y + self.rho * (z_mix - z_new)
        return x_new, z_new, y_new


def _primal_infeasibility_certificate(A, l, u, dy, tol=1e-6):
    norm = np.max(np.abs(dy), initial=0.0)
    if norm <= 1e-14:
        return False
    v = dy / norm
    if np.max(np.abs(A.T @ v), initial=0.0) > tol:
        return False
    vp, vm = np.maximum(v, 0.0), np.minimum(v, 0.0)
    # any push against an infinite bound disqualifies the certificate
    if np.any(vp[~np.isfinite(u)] > tol) or np.any(-vm[~np.isfinite(l)] > tol):
        return False
    support = float(np.sum(u[np.isfinite(u)] * vp[np.isfinite(u)])
                    + np.sum(l[np.isfinite(l)] * vm[np.isfinite(l)]))
    return support < -tol


def _polish(H, g, A, l, u, x, y, z, delta=1e-9):
    """Active-set refinement: solve the equality KKT system on the detected
    active rows with static regularization plus iterative refinement."""
    n, m = H.shape[0], A.shape[0]
    if m == 0:
        return None
    low = (l == u) | (y < -1e-10) | (np.isfinite(l) & (np.abs(z - l) < 1e-9))
    upp = (~low) & ((y > 1e-10) | (np.isfinite(u) & (np.abs(z - u) < 1e-9)))
    act = low | upp
    if not np.any(act):
        return None
    A_act = A[act]
    b_act = np.where(low[act], l[act], u[act])
    k = A_act.shape[0]
    K = sp.bmat([[H + delta * sp.identity(n, format="csc"), A_act.T],
                 [A_act, -delta * sp.identity(k, format="csc")]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError:
        return None
    rhs = np.concatenate((-g, b_act))
    sol = lu.solve(rhs)
    for _ in range(3):  # refinement against the unregularized system
        r1 = -g - (H @ sol[:n] + A_act.T @ sol[n:])
        r2 = b_act - A_act @ sol[:n]
        sol = sol + lu.solve(np.concatenate((r1, r2)))
    x_p = sol[:n]
    y_p = np.zeros(m)
    y_p[act] = sol[n:]
    return x_p, y_p


def solve_qp(p: QpProblem, *, x0=None, y0=None, max_iterations: int = 4000,
             tol: float = 1e-6, bound_tol: float = 1e-8):
    """Solve a convex QP by over-relaxed operator splitting.

    Returns (x, SolveReport).  Status is `optimal` only if the recomputed KKT
    residual is <= tol and every constraint holds to bound_tol.
    """
    g = np.asarray(p.g, dtype=float)
    n = len(g)
    H = sp.csc_matrix(p.H)
    if _symmetry_defect(H) > 1e-10:
        raise ValueError("H must be symmetric")
    H = 0.5 * (H + H.T)
    A, l, u = p.stacked()
    m = A.shape[0]

    if m == 0:
        try:
            x = spla.splu(sp.csc_matrix(H)).solve(-g)
        except RuntimeError:
            x = np.linalg.lstsq(H.toarray(), -g, rcond=None)[0]
        kkt, viol = _kkt_residual(H, g, A, l, u, x, np.zeros(0))
        status = OPTIMAL if kkt <= tol else MAX_ITER
        return x, SolveReport(status, 0, viol, qp_cost(p, x), kkt_residual=kkt,
                              duals=np.zeros(0))

    core = _AdmmCore(H, g, A, l, u)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float).copy()
    z = np.clip(A @ x, l, u)

    best = None  # (kkt, x, y, iterations)
    eps_work = min(tol, 1e-7)
    y_prev_check = y.copy()
    refactors = 0
    it = 0
    while it < max_iterations:
        x, z, y = core.step(x, z, y)
        it += 1
        if it % 25 != 0 and it != max_iterations:
            continue

        r_prim = float(np.max(np.abs(A @ x - z), initial=0.0))
        r_dual = float(np.max(np.abs(H @ x + g + A.T @ y), initial=0.0))

        if r_prim <= eps_work and r_dual <= eps_work:
            candidates = [(x, y)]
            pol = _polish(H, g, A, l, u, x, y, z)
            if pol is not None:
                candidates.insert(0, pol)
            for cx, cy in candidates:
                kkt, viol = _kkt_residual(H, g, A, l, u, cx, cy)
                if best is None or kkt < best[0]:
                    best = (kkt, cx.copy(), cy.copy(), it)
                if kkt <= tol and viol <= bound_tol:
                    return cx, SolveReport(OPTIMAL, it, viol, qp_cost(p, cx),
                                           kkt_residual=kkt, duals=cy)
            eps_work = max(eps_work / 10.0, 1e-14)

        dy = y - y_prev_check
        y_prev_check = y.copy()
        if _primal_infeasibility_certificate(A, l, u, dy):
            viol = _constraint_violation(A, l, u, x)
            return x, SolveReport(INFEASIBLE, it, viol, qp_cost(p, x), duals=y)

        if it % 100 == 0 and refactors < 20:
            denom_p = max(np.max(np.abs(A @ x), initial=0.0),
                          np.max(np.abs(z), initial=0.0), 1.0)
            denom_d = max(np.max(np.abs(H @ x), initial=0.0),
                          np.max(np.abs(A.T @ y), initial=0.0),
                          np.max(np.abs(g), initial=0.0), 1.0)
            ratio = (r_prim / denom_p) / max(r_dual / denom_d, 1e-16)
            scale = np.sqrt(ratio)
            if scale > 5.0 or scale < 0.2:
                core.update_rho(scale)
                refactors += 1

    # iteration budget exhausted: return the sharpest point seen
    pol = _polish(H, g, A, l, u, x, y, z)
    if pol is not None:
        kkt, _ = _kkt_residual(H, g, A, l, u, pol[0], pol[1])
        if best is None or kkt < best[0]:
            best = (kkt, pol[0], pol[1], it)
    if best is None:
        best = (_kkt_residual(H, g, A, l, u, x, y)[0], x, y, it)
    kkt, bx, by, _ = best
    viol = _constraint_violation(A, l, u, bx)
    status = OPTIMAL if (kkt <= tol and viol <= bound_tol) else MAX_ITER
    return bx, SolveReport(status, it, viol, qp_cost(p, bx), kkt_residual=kkt,
                           duals=by)


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------


def finite_difference_jacobian(f: Callable, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian; entry error O(h^2) for smooth f."""
    if h <= 0.0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        jac[:, i] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2.0 * h)
    return jac


def finite_difference_gradient(f: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def _fd_hessian_psd(f: Callable, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Symmetrized finite-difference Hessian, eigenvalue-clipped to PSD."""
    grad = lambda v: finite_difference_gradient(f, v, h)
    Hm = finite_difference_jacobian(grad, x, h)
    Hm = 0.5 * (Hm + Hm.T)
    w, v = np.linalg.eigh(Hm)
    w = np.maximum(w, 1e-8 * max(1.0, float(np.max(np.abs(w)))))
    return (v * w) @ v.T


# --------------------------------------------------------------------------
# sequential convexification
# --------------------------------------------------------------------------


@dataclass
class NlpProblem:
    """Smooth NLP: min cost(x) s.t. eq(x) = 0, ineq(x) >= 0, lb <= x <= ub.

    Derivative providers are optional; missing ones fall back to central
    differences with step `fd_step`.  `cost_hess` must return a PSD
    approximation (dense or sparse).  `project`, when given, restores
    equality feasibility of a candidate point (e.g. a dynamics rollout) and
    is applied to every candidate before the merit test.
    """

    n: int
    cost: Callable
    cost_grad: Callable = None
    cost_hess: Callable = None
    eq: Callable = None
    eq_jac: Callable = None
    ineq: Callable = None
    ineq_jac: Callable = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    project: Callable = None
    fd_step: float = 1e-5
    trust_scale: Optional[np.ndarray] = None  # per-variable trust multipliers


@dataclass
class NlpOptions:
    max_iterations: int = 150
    trust_radius: float = 5.0
    trust_min: float = 1e-9
    trust_max: float = 1e4
    penalty: Optional[float] = None
    penalty_max: float = 1e7
    tol_violation: float = 1e-4
    tol_stationarity: float = 1e-3
    qp_max_iterations: int = 4000
    qp_tol: float = 1e-6
    callback: Callable = None  # called per iteration with a state dict


class _NlpFuncs:
    """Problem functions with finite-difference fallbacks."""

    def __init__(self, p: NlpProblem):
        self.p = p
        self.eq = p.eq if p.eq is not None else (lambda x: np.zeros(0))
        self.ineq = p.ineq if p.ineq is not None else (lambda x: np.zeros(0))

    def cost(self, x):
        return float(self.p.cost(x))

    def grad(self, x):
        if self.p.cost_grad is not None:
            return np.asarray(self.p.cost_grad(x), dtype=float)
        return finite_difference_gradient(self.p.cost, x, self.p.fd_step)

    def hess(self, x):
        if self.p.cost_hess is not None:
            return sp.csc_matrix(self.p.cost_hess(x))
        if self.p.n <= 25:  # FD Hessian costs O(n^2) evaluations
            return sp.csc_matrix(_fd_hessian_psd(self.p.cost, x))
        # curvature then comes solely from the Levenberg damping
        return sp.csc_matrix((self.p.n, self.p.n))

    def eq_jac(self, x):
        if self.p.eq_jac is not None:
            return sp.csc_matrix(self.p.eq_jac(x))
        return sp.csc_matrix(finite_difference_jacobian(self.eq, x, self.p.fd_step))

    def ineq_jac(self, x):
        if self.p.ineq_jac is not None:
            return sp.csc_matrix(self.p.ineq_jac(x))
        return sp.csc_matrix(finite_difference_jacobian(self.ineq, x, self.p.fd_step))


def _violations(c_eq, c_in):
    v_eq = float(np.max(np.abs(c_eq), initial=0.0))
    v_in = float(np.max(-c_in, initial=0.0)) if c_in.size else 0.0
    return max(v_eq, max(v_in, 0.0))


def _l1_violation(c_eq, c_in):
    return float(np.sum(np.abs(c_eq)) + np.sum(np.maximum(-c_in, 0.0)))


def _build_subproblem(grad, B, J_eq, c_eq, J_in, c_in, mu, step_lo, step_hi,
                      damping):
    """L1-penalized trust-region QP in variables [p, s+, s-, t].

    `damping` is a Levenberg term that keeps the subproblem strongly convex
    when the provided curvature is flat (pure-length objectives)."""
    n = grad.size
    me, mi = c_eq.size, c_in.size
    nv = n + 2 * me + mi
    H = sp.block_diag(
        [B + damping * sp.identity(n, format="csc"),
         sp.csc_matrix((2 * me + mi, 2 * me + mi))], format="csc")
    g = np.concatenate((grad, np.full(2 * me + mi, mu)))

    A_eq = b_eq = None
    if me:
        A_eq = sp.hstack(
            [J_eq, -sp.identity(me), sp.identity(me), sp.csc_matrix((me, mi))],
            format="csc")
        b_eq = -c_eq
    rows, lo, hi = [], [], []
    if mi:
        rows.append(sp.hstack(
            [J_in, sp.csc_matrix((mi, 2 * me)), sp.identity(mi)], format="csc"))
        lo.append(-c_in)
        hi.append(np.full(mi, np.inf))
    rows.append(sp.hstack(
        [sp.identity(n), sp.csc_matrix((n, 2 * me + mi))], format="csc"))
    lo.append(step_lo)
    hi.append(step_hi)
    if 2 * me + mi:
        rows.append(sp.hstack(
            [sp.csc_matrix((2 * me + mi, n)), sp.identity(2 * me + mi)],
            format="csc"))
        lo.append(np.zeros(2 * me + mi))
        hi.append(np.full(2 * me + mi, np.inf))
    A_in = sp.vstack(rows, format="csc")
    return QpProblem(H, g, A_eq=A_eq, b_eq=b_eq, A_in=A_in,
                     lb=np.concatenate(lo), ub=np.concatenate(hi)), nv


def _model_merit(grad, B, J_eq, c_eq, J_in, c_in, mu, p_step, f0, damping):
    lin = (f0 + float(grad @ p_step)
           + 0.5 * float(p_step @ (B @ p_step))
           + 0.5 * damping * float(p_step @ p_step))
    pen = 0.0
    if c_eq.size:
        pen += float(np.sum(np.abs(c_eq + J_eq @ p_step)))
    if c_in.size:
        pen += float(np.sum(np.maximum(-(c_in + J_in @ p_step), 0.0)))
    return lin + mu * pen


def solve_nlp(p: NlpProblem, x0: np.ndarray, options: NlpOptions = None):
    """Sequential convexification with an L1 exact-penalty merit function.

    Returns (x, SolveReport).  Optimal requires recomputed constraint
    violation <= tol_violation and a stationarity residual <= tol_stationarity;
    the merit function is non-increasing across accepted steps at fixed
    penalty weight.
    """
    opt = options or NlpOptions()
    funcs = _NlpFuncs(p)
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    if p.lb is not None:
        x = np.maximum(x, p.lb)
    if p.ub is not None:
        x = np.minimum(x, p.ub)
    if p.project is not None:
        x = np.asarray(p.project(x), dtype=float)

    f = funcs.cost(x)
    c_eq = np.atleast_1d(np.asarray(funcs.eq(x), dtype=float))
    c_in = np.atleast_1d(np.asarray(funcs.ineq(x), dtype=float))
    if c_eq.ndim == 0 or c_eq.size == 0:
        c_eq = np.zeros(0)
    if c_in.ndim == 0 or c_in.size == 0:
        c_in = np.zeros(0)

    grad = funcs.grad(x)
    mu = opt.penalty if opt.penalty is not None else max(
        10.0, 10.0 * float(np.max(np.abs(grad), initial=0.0)))
    trust = opt.trust_radius
    history = [_violations(c_eq, c_in)]
    stationarity = float("nan")
    need_derivs = False
    B = funcs.hess(x)
    J_eq = funcs.eq_jac(x) if c_eq.size else sp.csc_matrix((0, p.n))
    J_in = funcs.ineq_jac(x) if c_in.size else sp.csc_matrix((0, p.n))
    stalled_rounds = 0
    best_round_viol = np.inf

    it = 0
    status = MAX_ITER
    while it < opt.max_iterations:
        it += 1
        if need_derivs:
            grad = funcs.grad(x)
            B = funcs.hess(x)
            J_eq = funcs.eq_jac(x) if c_eq.size else sp.csc_matrix((0, p.n))
            J_in = funcs.ineq_jac(x) if c_in.size else sp.csc_matrix((0, p.n))
            need_derivs = False

        step_lo = np.full(p.n, -trust)
        step_hi = np.full(p.n, trust)
        if p.lb is not None:
            step_lo = np.maximum(step_lo, p.lb - x)
        if p.ub is not None:
            step_hi = np.minimum(step_hi, p.ub - x)

        sub, _ = _build_subproblem(grad, B, J_eq, c_eq, J_in, c_in, mu,
                                   step_lo, step_hi)
        sol, rep = solve_qp(sub, max_iterations=opt.qp_max_iterations,
                            tol=opt.qp_tol)
        p_step = sol[:p.n]

        merit_now = f + mu * _l1_violation(c_eq, c_in)
        predicted = merit_now - _model_merit(grad, B, J_eq, c_eq, J_in, c_in,
                                             mu, p_step, f)

        if predicted <= 1e-10 * max(1.0, abs(merit_now)):
            # converged at the current penalty weight
            viol = _violations(c_eq, c_in)
            if viol <= opt.tol_violation:
                stationarity = _nlp_stationarity(grad, J_eq, J_in, rep, p,
                                                 predicted, trust)
                status = OPTIMAL if stationarity <= opt.tol_stationarity else MAX_ITER
                break
            if mu >= opt.penalty_max:
                status = INFEASIBLE
                break
            if viol >= best_round_viol - 1e-12:
                stalled_rounds += 1
                if stalled_rounds >= 3:
                    status = INFEASIBLE
                    break
            else:
                best_round_viol = viol
                stalled_rounds = 0
            mu = min(mu * 10.0, opt.penalty_max)
            trust = max(trust, opt.trust_radius / 10.0)
            continue

        x_cand = x + p_step
        if p.project is not None:
            x_cand = np.asarray(p.project(x_cand), dtype=float)
        if not np.all(np.isfinite(x_cand)):
            trust *= 0.4
            if trust < opt.trust_min:
                status = MAX_ITER
                break
            continue

        f_cand = funcs.cost(x_cand)
        ce_cand = np.atleast_1d(np.asarray(funcs.eq(x_cand), dtype=float)) \
            if c_eq.size or p.eq is not None else np.zeros(0)
        ci_cand = np.atleast_1d(np.asarray(funcs.ineq(x_cand), dtype=float)) \
            if c_in.size or p.ineq is not None else np.zeros(0)
        merit_cand = f_cand + mu * _l1_violation(ce_cand, ci_cand)
        ratio = (merit_now - merit_cand) / predicted

        if opt.callback is not None:
            opt.callback({"iteration": it, "trust": trust, "penalty": mu,
                          "merit": merit_now, "merit_candidate": merit_cand,
                          "predicted": predicted, "ratio": ratio,
                          "step_norm": float(np.max(np.abs(p_step), initial=0.0)),
                          "violation": _violations(c_eq, c_in),
                          "qp_status": rep.status})

        if ratio >= 0.05 and merit_cand <= merit_now:
            x, f, c_eq, c_in = x_cand, f_cand, ce_cand, ci_cand
            need_derivs = True
            history.append(_violations(c_eq, c_in))
            hit_boundary = np.max(np.abs(p_step), initial=0.0) >= 0.9 * trust
            if ratio > 0.7 and hit_boundary:
                trust = min(trust * 1.6, opt.trust_max)
        else:
            trust *= 0.4
            if trust < opt.trust_min:
                viol = _violations(c_eq, c_in)
                if viol <= opt.tol_violation:
                    stationarity = _nlp_stationarity(grad, J_eq, J_in, rep, p,
                                                     predicted, trust)
                    status = OPTIMAL if stationarity <= opt.tol_stationarity else MAX_ITER
                else:
                    status = INFEASIBLE if mu >= opt.penalty_max else MAX_ITER
                break

    viol = _violations(c_eq, c_in)
    report = SolveReport(status, it, viol, funcs.cost(x),
                         stationarity=stationarity,
                         violation_history=history)
    return x, report


def _nlp_stationarity(grad, J_eq, J_in, rep, p, predicted, trust):
    """KKT stationarity estimate from the last subproblem's multipliers.

    Subproblem row order is [eq rows][ineq rows][step box][slack box]; the
    step-box duals absorb genuine variable-bound multipliers.  Falls back to
    the normalized predicted merit reduction when duals are unavailable.
    """
    fallback = max(1e-16, predicted / max(trust, 1e-6))
    if rep.duals is None or not np.isfinite(rep.kkt_residual) \
            or rep.kkt_residual > 1e-4:
        return fallback
    me, mi = J_eq.shape[0], J_in.shape[0]
    y = rep.duals
    if y.size < me + mi + p.n:
        return fallback
    r = grad.copy()
    if me:
        r = r + J_eq.T @ y[:me]
    if mi:
        r = r + J_in.T @ y[me:me + mi]
    r = r + y[me + mi:me + mi + p.n]
    return float(np.max(np.abs(r), initial=0.0))
