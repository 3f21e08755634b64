"""Barrier-constrained NMPC expert for data generation and benchmarking.

The finite-horizon problem has an exactly quadratic cost and exactly
linear dynamics once the states are condensed into the input sequence, so
the only nonlinearity is the barrier row. Each SQP pass linearizes the
barrier margin jointly in (x_k, u_k) around the current predicted
trajectory, solves the condensed QP, and line-searches an l1 merit.
A returned "optimal" status is certified by direct substitution of the
solution into every constraint, never by trusting solver flags.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import (QpProblem, solve_qp, finite_diff_jacobian,
                       OPTIMAL, INFEASIBLE, MAX_ITER)


@dataclass(frozen=True)
class OcpConfig:
    horizon: int
    q_mat: np.ndarray
    r_mat: np.ndarray
    p_mat: np.ndarray
    model: object
    barrier: object          # sphere or cone; None disables the safety row
    epsilon: float
    u_bound: float
    goal: np.ndarray
    mean_motion: float
    pos_bound: float = 40.0
    vel_bound: float = 1.0
    terminal_halfwidths: np.ndarray = None  # optional box around the goal
    position_constraint: bool = False       # enforce h(x_k) >= 0 directly
    barrier_screen: float = 50.0            # drop stages this far from the boundary

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "q_mat", np.asarray(self.q_mat, dtype=float))
        object.__setattr__(self, "r_mat", np.asarray(self.r_mat, dtype=float))
        object.__setattr__(self, "p_mat", np.asarray(self.p_mat, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))


@dataclass
class ExpertSolution:
    u_seq: np.ndarray
    x_pred: np.ndarray
    status: str
    sqp_iters: int
    solve_time: float
    objective: float = np.nan


class NmpcExpert:
    """Receding-horizon solver instance; carries warm-start state between
    control() calls, so one instance per rollout."""

    def __init__(self, cfg: OcpConfig):
        self.cfg = cfg
        self._build_prediction()
        self._build_cost()
        self._build_linear_rows()
        self._last = None

    # -- condensed problem data ------------------------------------------

    def _build_prediction(self):
        cfg = self.cfg
        n_steps = cfg.horizon
        a, b = cfg.model.a_d, cfg.model.b_d
        nx, nu = a.shape[0], b.shape[1]
        powers = [np.eye(nx)]
        for _ in range(n_steps):
            powers.append(a @ powers[-1])
        # x_k = t_mat[k] x0 + s_mat[k] U,  k = 0..N
        t_mat = np.stack(powers)                       # (N+1, 6, 6)
        s_mat = np.zeros((n_steps + 1, nx, n_steps * nu))
        for k in range(1, n_steps + 1):
            for j in range(k):
                s_mat[k, :, j * nu:(j + 1) * nu] = powers[k - 1 - j] @ b
        self._t_mat, self._s_mat = t_mat, s_mat
        self._nx, self._nu = nx, nu

    def _build_cost(self):
        cfg = self.cfg
        n_steps, nu = cfg.horizon, self._nu
        weights = [cfg.q_mat] * (n_steps - 1) + [cfg.p_mat]
        s_stack = np.concatenate(self._s_mat[1:], axis=0)   # x_1..x_N rows
        e_blk = np.zeros((6 * n_steps, 6 * n_steps))
        for k, w in enumerate(weights):
            e_blk[6 * k:6 * k + 6, 6 * k:6 * k + 6] = w
        r_blk = np.kron(np.eye(n_steps), cfg.r_mat)
        hess = 2.0 * (s_stack.T @ e_blk @ s_stack + r_blk)
        self._hess = 0.5 * (hess + hess.T)
        self._s_stack = s_stack
        self._e_blk = e_blk
        self._r_blk = r_blk
        self._n_var = n_steps * nu

    def _grad(self, x0):
        cfg = self.cfg
        t_stack = np.concatenate(self._t_mat[1:], axis=0)
        goal_stack = np.tile(cfg.goal, cfg.horizon)
        return 2.0 * self._s_stack.T @ self._e_blk @ (t_stack @ x0 - goal_stack)

    def _build_linear_rows(self):
        """State box rows are the same at every solve up to the x0 shift."""
        cfg = self.cfg
        lo = np.concatenate([np.full(3, -cfg.pos_bound), np.full(3, -cfg.vel_bound)])
        hi = -lo
        rows, idx = [], []
        for k in range(1, cfg.horizon):
            rows.append(self._s_mat[k])
            rows.append(-self._s_mat[k])
            idx.append((k, lo.copy(), hi.copy()))
        if cfg.terminal_halfwidths is not None:
            hw = np.asarray(cfg.terminal_halfwidths, dtype=float)
            rows.append(self._s_mat[cfg.horizon])
            rows.append(-self._s_mat[cfg.horizon])
            idx.append((cfg.horizon, cfg.goal - hw, cfg.goal + hw))
        self._box_rows = np.vstack(rows) if rows else np.zeros((0, self._n_var))
        self._box_idx = idx
        # reach[i] bounds |row_i (U' - U)| over the input box, used to drop
        # rows that no feasible step can violate
        self._box_reach = 2.0 * self.cfg.u_bound * np.abs(self._box_rows).sum(axis=1)

    def _box_rhs(self, x0):
        rhs = []
        for k, lo, hi in self._box_idx:
            xk_free = self._t_mat[k] @ x0
            rhs.append(lo - xk_free)
            rhs.append(-(hi - xk_free))
        return np.concatenate(rhs) if rhs else np.zeros(0)

    # -- nonlinear barrier rows -------------------------------------------

    def predict(self, x0, u_flat):
        xs = self._t_mat @ x0 + self._s_mat @ u_flat
        return xs  # (N+1, 6)

    def _barrier_rows(self, x0, u_flat, xs, screen):
        """Linearized safety rows: value + grad_x dx + grad_u du >= bound.

        Rows whose current value clears the screen threshold are dropped;
        the final substitution check still covers every stage, and solve()
        retries unscreened if that check fails.
        """
        cfg = self.cfg
        bar = cfg.barrier
        n_steps, nu = cfg.horizon, self._nu
        rows, rhs = [], []
        if cfg.position_constraint:
            for k in range(1, n_steps + 1):
                xk = xs[k]
                val = bar.value(xk)
                if screen is not None and val > screen:
                    continue
                gx = bar.state_grad(xk)
                row = gx @ self._s_mat[k]
                rows.append(row)
                rhs.append(-val + row @ u_flat)
        else:
            for k in range(n_steps):
                xk = xs[k]
                uk = u_flat[k * nu:(k + 1) * nu]
                m0, mu = bar.margin_coeffs(xk, cfg.mean_motion)
                val = m0 + float(mu @ uk)
                if screen is not None and k > 0 and val > screen:
                    continue
                if k == 0:
                    gx = np.zeros(6)   # x_0 is data, margin exactly affine in u_0
                else:
                    gx = bar.margin_state_grad(xk, uk, cfg.mean_motion)
                row = gx @ self._s_mat[k]
                row = row.copy()
                row[k * nu:(k + 1) * nu] += mu
                rows.append(row)
                rhs.append(cfg.epsilon - val + row @ u_flat)
        if not rows:
            return np.zeros((0, self._n_var)), np.zeros(0)
        return np.vstack(rows), np.asarray(rhs)

    def _violation(self, xs, u_flat):
        """l1 violation of all inequality rows at an iterate. Warm-shifted
        starting points can sit slightly outside the state boxes, so the
        merit must see box violations too or the line search stalls on a
        cheap infeasible point."""
        cfg = self.cfg
        total = float(np.clip(np.abs(u_flat) - cfg.u_bound, 0.0, None).sum())
        for k, lo, hi in self._box_idx:
            total += float(np.clip(lo - xs[k], 0.0, None).sum())
            total += float(np.clip(xs[k] - hi, 0.0, None).sum())
        bar = cfg.barrier
        if bar is None:
            return total
        if cfg.position_constraint:
            for k in range(1, cfg.horizon + 1):
                total += max(0.0, -bar.value(xs[k]))
        else:
            for k in range(cfg.horizon):
                uk = u_flat[k * self._nu:(k + 1) * self._nu]
                total += max(0.0, cfg.epsilon - bar.margin(xs[k], uk, cfg.mean_motion))
        return total

    def _objective(self, x0, u_flat):
        xs = self.predict(x0, u_flat)
        cfg = self.cfg
        cost = float(u_flat @ self._r_blk_full(u_flat))
        for k in range(1, cfg.horizon + 1):
            e = xs[k] - cfg.goal
            w = cfg.p_mat if k == cfg.horizon else cfg.q_mat
            cost += float(e @ w @ e)
        return cost

    def _r_blk_full(self, u_flat):
        return self._r_blk @ u_flat

    # -- solver -------------------------------------------------------------

    def solve(self, x0, warm=None, max_sqp_iter=30, step_tol=1e-8):
        t_start = time.perf_counter()
        sol = self._solve_pass(x0, warm, max_sqp_iter, step_tol,
                               screen=self.cfg.barrier_screen, t_start=t_start)
        if sol.status == MAX_ITER and self.cfg.barrier_screen is not None:
            # screening may have hidden a stage that then failed the
            # substitution check; redo with every row present
            sol = self._solve_pass(x0, warm, max_sqp_iter, step_tol,
                                   screen=None, t_start=t_start)
        return sol

    def _solve_pass(self, x0, warm, max_sqp_iter, step_tol, screen, t_start):
        cfg = self.cfg
        x0 = np.asarray(x0, dtype=float)
        n_var = self._n_var
        grad = self._grad(x0)
        box_rhs = self._box_rhs(x0)
        lower = np.full(n_var, -cfg.u_bound)
        upper = np.full(n_var, cfg.u_bound)

        if warm is not None:
            u_flat = np.concatenate([warm.u_seq[1:].ravel(), warm.u_seq[-1]])
        else:
            u_flat = np.zeros(n_var)
        u_flat = np.clip(u_flat, lower, upper)

        if cfg.barrier is None:
            keep = self._live_box_rows(u_flat, box_rhs)
            problem = QpProblem(hess=self._hess, grad=grad,
                                ineq_mat=self._box_rows[keep],
                                ineq_vec=box_rhs[keep],
                                lower=lower, upper=upper)
            sol = solve_qp(problem, warm_start=u_flat, max_iter=400)
            return self._finish(x0, sol.z, sol.status, 1, t_start)

        merit_mu = 10.0
        status = MAX_ITER
        iters = 0
        for it in range(max_sqp_iter):
            iters = it + 1
            xs = self.predict(x0, u_flat)
            bar_rows, bar_rhs = self._barrier_rows(x0, u_flat, xs, screen)
            keep = self._live_box_rows(u_flat, box_rhs)
            problem = QpProblem(
                hess=self._hess, grad=grad,
                ineq_mat=np.vstack([self._box_rows[keep], bar_rows]),
                ineq_vec=np.concatenate([box_rhs[keep], bar_rhs]),
                lower=lower, upper=upper)
            sol = solve_qp(problem, warm_start=u_flat, max_iter=400)
            if sol.status == INFEASIBLE:
                if it == 0:
                    return self._finish(x0, u_flat, INFEASIBLE, iters, t_start)
                break
            if sol.duals is not None and sol.duals.size:
                merit_mu = max(merit_mu, 2.0 * float(sol.duals.max()))

            step_vec = sol.z - u_flat
            if np.linalg.norm(step_vec) <= step_tol:
                status = OPTIMAL
                break
            phi0 = self._objective(x0, u_flat) + merit_mu * self._violation(xs, u_flat)
            alpha = 1.0
            accepted = False
            for _ in range(10):
                u_try = u_flat + alpha * step_vec
                xs_try = self.predict(x0, u_try)
                phi_try = self._objective(x0, u_try) + merit_mu * self._violation(xs_try, u_try)
                if phi_try <= phi0 + 1e-12 * max(1.0, abs(phi0)):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            u_flat = u_flat + alpha * step_vec
            if np.linalg.norm(alpha * step_vec) <= step_tol:
                status = OPTIMAL
                break
        return self._finish(x0, u_flat, status, iters, t_start)

    def _live_box_rows(self, u_flat, box_rhs):
        """Indices of state-box rows a feasible step could actually reach."""
        if self._box_rows.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        slack = self._box_rows @ u_flat - box_rhs
        return slack <= self._box_reach

    def _finish(self, x0, u_flat, status, iters, t_start):
        cfg = self.cfg
        xs = self.predict(x0, u_flat)
        u_seq = u_flat.reshape(cfg.horizon, self._nu)
        if status == OPTIMAL and not self._certify(xs, u_flat):
            status = MAX_ITER
        sol = ExpertSolution(
            u_seq=u_seq, x_pred=xs, status=status, sqp_iters=iters,
            solve_time=time.perf_counter() - t_start,
            objective=self._objective(x0, u_flat))
        return sol

    def _certify(self, xs, u_flat, tol=1e-6):
        """Substitution check of every constraint on the returned iterate."""
        cfg = self.cfg
        if np.any(np.abs(u_flat) > cfg.u_bound + 1e-8):
            return False
        for k, lo, hi in self._box_idx:
            if np.any(xs[k] < lo - 1e-8) or np.any(xs[k] > hi + 1e-8):
                return False
        if cfg.barrier is not None:
            if cfg.position_constraint:
                for k in range(1, cfg.horizon + 1):
                    if cfg.barrier.value(xs[k]) < -tol:
                        return False
            else:
                for k in range(cfg.horizon):
                    uk = u_flat[k * self._nu:(k + 1) * self._nu]
                    if cfg.barrier.margin(xs[k], uk, cfg.mean_motion) < cfg.epsilon - tol:
                        return False
        return True

    # -- receding-horizon interface -----------------------------------------

    def control(self, x):
        sol = self.solve(x, warm=self._last)
        if sol.status == INFEASIBLE:
            self._last = None
            raise ExpertInfeasibleError("expert problem infeasible at state")
        self._last = sol
        return sol.u_seq[0], sol

    def reset(self):
        self._last = None


class ExpertInfeasibleError(RuntimeError):
    """The expert OCP admits no feasible input sequence at this state."""
