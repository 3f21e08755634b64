"""One-step quadratic-program safety filter.

Minimally adjusts a proposed control so the barrier condition holds as a
hard constraint while the Lyapunov decrease condition is softened by a
quadratically penalized slack:

    min  ||u - u_nn||^2 + p * slack^2
    s.t. cbf_margin(x, u) >= eps        (hard, never slackened)
         clf_margin(x, u) <= slack
         |u_i| <= u_bound

Both margins are affine in u, so this is a 4-variable convex QP.
"""

import time
from dataclasses import dataclass

import numpy as np

from .numerics import QpProblem, solve_qp, OPTIMAL


class HardInfeasibleError(RuntimeError):
    """Barrier condition and input box conflict: the state has left the
    inner safe set. Treated by callers as a safety-envelope breach."""


@dataclass(frozen=True)
class FilterConfig:
    barrier: object
    clf: object
    epsilon: float
    slack_weight: float
    u_bound: float
    mean_motion: float

    def __post_init__(self):
        if self.slack_weight <= 0:
            raise ValueError("slack_weight must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass
class FilterResult:
    u_sf: np.ndarray
    slack: float
    intervention: float
    cbf_margin_out: float
    clf_margin_out: float
    status: str
    solve_time: float


class SafetyFilter:
    """Stateful wrapper around the filter QP; keeps the previous solution
    as a warm hint since constraint activity is temporally coherent at
    10 Hz. Instances are single-threaded."""

    def __init__(self, cfg: FilterConfig):
        self.cfg = cfg
        self._warm = None

    def reset(self):
        self._warm = None

    def apply(self, x, u_nn):
        cfg = self.cfg
        t0 = time.perf_counter()
        u_nn = np.asarray(u_nn, dtype=float)
        m0, mu = cfg.barrier.margin_coeffs(x, cfg.mean_motion)
        v0, lu = cfg.clf.margin_coeffs(x, cfg.mean_motion)

        hess = np.diag([2.0, 2.0, 2.0, 2.0 * cfg.slack_weight])
        grad = np.concatenate([-2.0 * u_nn, [0.0]])
        ineq_mat = np.array([
            np.concatenate([mu, [0.0]]),          # cbf margin >= eps
            np.concatenate([-lu, [1.0]]),         # slack - clf margin >= 0
        ])
        ineq_vec = np.array([cfg.epsilon - m0, v0])
        bound = cfg.u_bound
        problem = QpProblem(hess=hess, grad=grad,
                            ineq_mat=ineq_mat, ineq_vec=ineq_vec,
                            lower=np.array([-bound, -bound, -bound, -np.inf]),
                            upper=np.array([bound, bound, bound, np.inf]))
        sol = solve_qp(problem, warm_start=self._warm)
        if sol.status != OPTIMAL:
            # the CLF row is always satisfiable through the slack, so an
            # infeasible QP means the CBF condition conflicts with the box
            raise HardInfeasibleError(
                f"barrier condition unsatisfiable within input bounds "
                f"(h={cfg.barrier.value(x):.4g}, H={cfg.barrier.big_h(x):.4g})")
        self._warm = sol.z
        u_sf = sol.z[:3]
        slack = float(sol.z[3])
        elapsed = time.perf_counter() - t0
        return FilterResult(
            u_sf=u_sf,
            slack=slack,
            intervention=float(np.linalg.norm(u_sf - u_nn)),
            cbf_margin_out=m0 + float(mu @ u_sf),
            clf_margin_out=v0 + float(lu @ u_sf),
            status=sol.status,
            solve_time=elapsed,
        )


def apply_filter(cfg, x, u_nn, warm=None):
    """One-shot form of SafetyFilter.apply for stateless callers."""
    filt = SafetyFilter(cfg)
    filt._warm = warm
    return filt.apply(x, u_nn)


def intervention_stats(logs):
    """Aggregate filter-intervention statistics over rollout logs.

    Returns per-rollout means/maxima of ||u_sf - u_nn|| plus the fraction
    of steps on which the filter actually modified the input.
    """
    if not logs:
        raise ValueError("no rollout logs supplied")
    per_mean, per_max, per_rate = [], [], []
    for log in logs:
        iv = np.asarray(log.intervention, dtype=float)
        iv = iv[:len(iv) - 1] if len(iv) > 1 else iv  # terminal row carries no control
        per_mean.append(float(iv.mean()))
        per_max.append(float(iv.max()))
        per_rate.append(float((iv > 1e-9).mean()))
    return {
        "mean_intervention": per_mean,
        "max_intervention": per_max,
        "activation_rate": per_rate,
        "overall_mean": float(np.mean(per_mean)),
        "overall_max": float(np.max(per_max)),
        "overall_rate": float(np.mean(per_rate)),
    }
