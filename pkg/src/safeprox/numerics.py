"""Dense linear-algebra utilities shared by the control stack.

Provides exact zero-order-hold discretization, a structured-doubling
Riccati solver, a dual active-set QP solver for small dense problems,
and a central-difference Jacobian used as a testing oracle. Everything
operates on float64 numpy arrays and is a pure function of its inputs.
"""

from dataclasses import dataclass, field

import numpy as np


class InvalidMatrixError(ValueError):
    """Input matrix contains non-finite entries or has a bad shape."""


class RiccatiConvergenceError(RuntimeError):
    """Structured doubling iteration failed to converge."""


class NumericalError(RuntimeError):
    """A numerical evaluation produced non-finite values."""


@dataclass(frozen=True)
class DiscreteModel:
    """Exact discrete-time pair (a_d, b_d) at sample time ts."""

    a_d: np.ndarray
    b_d: np.ndarray
    ts: float

    def __post_init__(self):
        a = np.asarray(self.a_d, dtype=float)
        b = np.asarray(self.b_d, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidMatrixError("a_d must be square")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise InvalidMatrixError("b_d row count must match a_d")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise InvalidMatrixError("non-finite entries in discrete model")
        object.__setattr__(self, "a_d", a)
        object.__setattr__(self, "b_d", b)


def _pade6_expm(a):
    """Matrix exponential via scaling-and-squaring with a diagonal Pade
    approximant of order 6. Adequate for the well-conditioned, small-norm
    matrices produced by ZOH discretization at sub-second sample times."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    norm = np.linalg.norm(a, np.inf)
    s = 0
    if norm > 0.5:
        s = max(0, int(np.ceil(np.log2(norm / 0.5))))
    a_s = a / (2.0 ** s)

    # Pade(6,6) coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
    c = [1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0,
         1.0 / 665280.0]
    a2 = a_s @ a_s
    a4 = a2 @ a2
    a6 = a4 @ a2
    even = c[0] * np.eye(n) + c[2] * a2 + c[4] * a4 + c[6] * a6
    odd = a_s @ (c[1] * np.eye(n) + c[3] * a2 + c[5] * a4)
    num = even + odd
    den = even - odd
    result = np.linalg.solve(den, num)
    for _ in range(s):
        result = result @ result
    return result


def zoh_discretize(a_c, b_c, ts):
    """Exact zero-order-hold discretization of dx/dt = a_c x + b_c u.

    Uses the augmented-matrix exponential: exp([[A, B], [0, 0]] ts) has
    a_d and b_d as its top blocks.
    """
    a_c = np.asarray(a_c, dtype=float)
    b_c = np.asarray(b_c, dtype=float)
    if not (np.isfinite(a_c).all() and np.isfinite(b_c).all()):
        raise InvalidMatrixError("non-finite entries in continuous model")
    if ts <= 0:
        raise ValueError("sample time must be positive")
    n = a_c.shape[0]
    m = b_c.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_c
    aug[:n, n:] = b_c
    big = _pade6_expm(aug * ts)
    return DiscreteModel(a_d=big[:n, :n], b_d=big[:n, n:], ts=float(ts))


def dare_residual(a, b, q, r, p):
    """Frobenius norm of the fixed-point defect of a candidate Riccati
    solution; used as the independent convergence certificate."""
    apb = a.T @ p @ b
    gain_term = apb @ np.linalg.solve(r + b.T @ p @ b, apb.T)
    return np.linalg.norm(a.T @ p @ a - p - gain_term + q, ord="fro")


def solve_dare(model, q, r, max_iter=200, rel_tol=1e-12):
    """Stabilizing solution of the discrete-time algebraic Riccati equation
    by the structured doubling iteration (quadratically convergent, no
    eigendecomposition).

    Raises RiccatiConvergenceError if iterates stop contracting before the
    relative tolerance is met.
    """
    a = np.asarray(model.a_d, dtype=float)
    b = np.asarray(model.b_d, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = a.shape[0]
    eye = np.eye(n)

    a_k = a.copy()
    g_k = b @ np.linalg.solve(r, b.T)
    h_k = q.copy()
    for _ in range(max_iter):
        w = eye + g_k @ h_k
        try:
            w_inv_a = np.linalg.solve(w, a_k)
            w_inv_g = np.linalg.solve(w, g_k)
        except np.linalg.LinAlgError as exc:
            raise RiccatiConvergenceError("doubling step singular") from exc
        h_next = h_k + a_k.T @ h_k @ w_inv_a
        g_next = g_k + a_k @ w_inv_g @ a_k.T
        a_next = a_k @ w_inv_a
        h_next = 0.5 * (h_next + h_next.T)
        delta = np.linalg.norm(h_next - h_k, ord="fro")
        h_k, g_k, a_k = h_next, 0.5 * (g_next + g_next.T), a_next
        if not np.isfinite(h_k).all():
            raise RiccatiConvergenceError("doubling iteration diverged")
        if delta <= rel_tol * max(np.linalg.norm(h_k, ord="fro"), 1e-300):
            return h_k
    raise RiccatiConvergenceError("doubling iteration hit the cap")


@dataclass
class QpProblem:
    """min 0.5 z' hess z + grad' z  s.t.  ineq_mat z >= ineq_vec,
    lower <= z <= upper. hess must be symmetric positive definite."""

    hess: np.ndarray
    grad: np.ndarray
    ineq_mat: np.ndarray = None
    ineq_vec: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.hess = np.asarray(self.hess, dtype=float)
        self.grad = np.asarray(self.grad, dtype=float)
        n = self.grad.size
        if self.hess.shape != (n, n):
            raise InvalidMatrixError("hess/grad dimension mismatch")
        scale = max(1.0, np.abs(self.hess).max())
        if np.abs(self.hess - self.hess.T).max() > 1e-12 * scale:
            raise InvalidMatrixError("hess is not symmetric")
        self.hess = 0.5 * (self.hess + self.hess.T)
        if self.ineq_mat is None:
            self.ineq_mat = np.zeros((0, n))
            self.ineq_vec = np.zeros(0)
        else:
            self.ineq_mat = np.atleast_2d(np.asarray(self.ineq_mat, dtype=float))
            self.ineq_vec = np.atleast_1d(np.asarray(self.ineq_vec, dtype=float))
        if self.lower is None:
            self.lower = np.full(n, -np.inf)
        else:
            self.lower = np.asarray(self.lower, dtype=float)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        else:
            self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box bounds cross (lower > upper)")


@dataclass
class QpSolution:
    z: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    kkt_residual: float
    duals: np.ndarray = None
    active: tuple = field(default=())
    iterations: int = 0


OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


def _stacked_constraints(problem):
    """Box bounds folded into the general inequality rows c_i' z >= d_i."""
    n = problem.grad.size
    rows = [problem.ineq_mat]
    rhs = [problem.ineq_vec]
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(problem.lower[i]):
            rows.append(eye[i:i + 1])
            rhs.append(np.array([problem.lower[i]]))
        if np.isfinite(problem.upper[i]):
            rows.append(-eye[i:i + 1])
            rhs.append(np.array([-problem.upper[i]]))
    return np.vstack(rows), np.concatenate(rhs)


def solve_qp(problem, warm_start=None, max_iter=200):
    """Dual active-set solve (Goldfarb-Idnani) of a strictly convex QP.

    Starts from the unconstrained optimum and adds violated constraints one
    at a time, so no phase-1 is required and primal infeasibility is
    certified exactly when a violated constraint admits no compatible dual
    step. Deterministic: the most violated constraint is selected each
    outer iteration, ties broken by lowest row index. A warm_start point
    only biases the selection order toward constraints that were tight at
    it; the result is independent of the hint.
    """
    h = problem.hess
    g = problem.grad
    n = g.size
    c_mat, d_vec = _stacked_constraints(problem)
    m = d_vec.size

    try:
        h_fact = np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise InvalidMatrixError("hess is not positive definite") from exc

    def h_solve(rhs):
        y = np.linalg.solve(h_fact, rhs)
        return np.linalg.solve(h_fact.T, y)

    z = -h_solve(g)
    active = []
    lam = []

    prefer = np.zeros(m)
    if warm_start is not None and m > 0:
        ws = np.asarray(warm_start, dtype=float)
        if ws.size == n and np.isfinite(ws).all():
            slack_ws = c_mat @ ws - d_vec
            prefer = np.where(np.abs(slack_ws) <= 1e-8, 1.0, 0.0)

    feas_tol = 1e-10 * (1.0 + np.abs(d_vec).max() if m else 1.0)
    iters = 0
    status = OPTIMAL
    while iters < max_iter:
        slack = c_mat @ z - d_vec if m else np.zeros(0)
        violated = slack < -feas_tol
        if not violated.any():
            break
        # most-violated first; warm-hinted rows win ties at equal violation
        score = np.where(violated, slack - 1e-9 * prefer, np.inf)
        p = int(np.argmin(score))
        n_p = c_mat[p]

        satisfied = False
        lam_enter = 0.0
        while iters < max_iter:
            iters += 1
            hin_p = h_solve(n_p)
            if active:
                n_act = c_mat[np.array(active)].T  # n x q
                hin_n = h_solve(n_act)
                m_small = n_act.T @ hin_n
                try:
                    r = np.linalg.solve(m_small, n_act.T @ hin_p)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(m_small, n_act.T @ hin_p, rcond=None)[0]
                d_dir = hin_p - hin_n @ r
            else:
                r = np.zeros(0)
                d_dir = hin_p

            denom = float(n_p @ d_dir)
            s_p = float(n_p @ z - d_vec[p])
            t_full = -s_p / denom if denom > 1e-14 else np.inf

            t_partial = np.inf
            k_block = -1
            for idx, rk in enumerate(r):
                if rk > 1e-12:
                    t_k = lam[idx] / rk
                    if t_k < t_partial:
                        t_partial = t_k
                        k_block = idx
            t = min(t_full, t_partial)
            if not np.isfinite(t):
                return QpSolution(z=z, status=INFEASIBLE,
                                  kkt_residual=np.inf, duals=np.zeros(m),
                                  active=tuple(active), iterations=iters)
            if denom > 1e-14:
                z = z + t * d_dir
            for idx in range(len(lam)):
                lam[idx] -= t * r[idx]
            lam_enter += t
            if t == t_full and t_full <= t_partial:
                active.append(p)
                lam.append(lam_enter)
                satisfied = True
                break
            # partial step: drop the blocking constraint, retry same p
            active.pop(k_block)
            lam.pop(k_block)
        if not satisfied and iters >= max_iter:
            status = MAX_ITER
            break
    else:
        status = MAX_ITER

    duals = np.zeros(m)
    for idx, lam_i in zip(active, lam):
        duals[idx] = lam_i
    kkt = _kkt_residual(h, g, c_mat, d_vec, z, duals)
    if status == OPTIMAL and kkt > 1e-6:
        status = MAX_ITER
    return QpSolution(z=z, status=status, kkt_residual=kkt, duals=duals,
                      active=tuple(active), iterations=iters)


def _kkt_residual(h, g, c_mat, d_vec, z, duals):
    scale = max(1.0, np.abs(g).max())
    stationarity = h @ z + g
    if d_vec.size:
        stationarity = stationarity - c_mat.T @ duals
        slack = c_mat @ z - d_vec
        feas = max(0.0, float(-slack.min()))
        comp = float(np.abs(duals * slack).max())
    else:
        feas = 0.0
        comp = 0.0
    return max(float(np.abs(stationarity).max()) / scale, feas, comp)


def finite_diff_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of a vector function; testing oracle."""
    x = np.asarray(x, dtype=float)
    if eps <= 0:
        raise ValueError("eps must be positive")
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    jac = np.zeros((f0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = eps
        f_plus = np.atleast_1d(np.asarray(f(x + dx), dtype=float))
        f_minus = np.atleast_1d(np.asarray(f(x - dx), dtype=float))
        if not (np.isfinite(f_plus).all() and np.isfinite(f_minus).all()):
            raise NumericalError("non-finite function evaluation in stencil")
        jac[:, j] = (f_plus - f_minus) / (2.0 * eps)
    return jac
