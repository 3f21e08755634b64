"""Barrier and Lyapunov certificates with analytic derivatives.

Both barriers have relative degree 2 under CWH dynamics (the control
enters h via the second derivative), so the enforced scalar condition is
built from the braking-aware transform

    H  = h + |hdot| hdot / (2 u_max)
    Hdot = hdot + |hdot| hddot(x, u) / u_max
    margin(x, u) = Hdot + gamma H        (kept >= eps by NMPC and filter)

which is affine in u. u_max here is a conservative scalar bound on the
braking authority available along the constraint gradient.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import drift_acceleration, cwh_system_matrices


class ConeApexError(ValueError):
    """Cone quantities are undefined at (or numerically near) the apex."""


class _Degree2Barrier:
    """Shared machinery: subclasses provide value/grad_pos/hess_pos."""

    def dot(self, x):
        x = np.asarray(x, dtype=float)
        return float(self.grad_pos(x) @ x[3:])

    def ddot_coeffs(self, x, n):
        """hddot(x, u) = c0 + cu @ u along the CWH flow at mean motion n."""
        x = np.asarray(x, dtype=float)
        v = x[3:]
        g = self.grad_pos(x)
        c0 = float(v @ self.hess_pos(x) @ v + g @ drift_acceleration(x, n))
        return c0, g

    def ddot(self, x, u, n):
        c0, cu = self.ddot_coeffs(x, n)
        return c0 + float(cu @ np.asarray(u, dtype=float))

    def big_h(self, x):
        h = self.value(x)
        hd = self.dot(x)
        return h + abs(hd) * hd / (2.0 * self.u_max_scalar)

    def margin_coeffs(self, x, n):
        """margin(x, u) = m0 + mu @ u (affine in the control)."""
        hd = self.dot(x)
        c0, cu = self.ddot_coeffs(x, n)
        scale = abs(hd) / self.u_max_scalar
        m0 = hd + scale * c0 + self.gamma * self.big_h(x)
        return m0, scale * cu

    def margin(self, x, u, n):
        m0, mu = self.margin_coeffs(x, n)
        return m0 + float(mu @ np.asarray(u, dtype=float))

    def state_grad(self, x):
        """Analytic gradient of h with respect to the full state."""
        g = np.zeros(6)
        g[:3] = self.grad_pos(x)
        return g

    def state_grad_big_h(self, x):
        """Analytic gradient of H; d(|hd| hd / 2)/d(hd) = |hd|."""
        x = np.asarray(x, dtype=float)
        gp = self.grad_pos(x)
        hd_grad = np.concatenate([self.hess_pos(x) @ x[3:], gp])
        return self.state_grad(x) + (abs(self.dot(x)) / self.u_max_scalar) * hd_grad

    def margin_state_grad(self, x, u, n, eps=1e-6):
        """Gradient of margin(x, u) with respect to x at fixed u. The
        generic path differentiates numerically (the analytic form needs
        third derivatives of h); subclasses override where those vanish."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        grad = np.zeros(6)
        for j in range(6):
            dx = np.zeros(6)
            dx[j] = eps
            grad[j] = (self.margin(x + dx, u, n) - self.margin(x - dx, u, n)) / (2 * eps)
        return grad


@dataclass(frozen=True)
class SphereBarrier(_Degree2Barrier):
    """Keep-out zone: h(x) = ||p - center||^2 - radius^2 >= 0."""

    center: np.ndarray
    radius: float
    gamma: float
    u_max_scalar: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0 or self.gamma <= 0 or self.u_max_scalar <= 0:
            raise ValueError("radius, gamma and u_max_scalar must be positive")

    def value(self, x):
        d = np.asarray(x, dtype=float)[:3] - self.center
        return float(d @ d) - self.radius ** 2

    def grad_pos(self, x):
        return 2.0 * (np.asarray(x, dtype=float)[:3] - self.center)

    def hess_pos(self, x):
        return 2.0 * np.eye(3)

    def margin_state_grad(self, x, u, n, eps=None):
        """Closed form: h is quadratic so all third derivatives vanish."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = x[:3] - self.center
        v = x[3:]
        um = self.u_max_scalar
        hd = 2.0 * float(w @ v)
        c0, cu = self.ddot_coeffs(x, n)
        hdd = c0 + float(cu @ u)
        sgn = np.sign(hd)
        d_hd = np.concatenate([2.0 * v, 2.0 * w])
        d_h = np.concatenate([2.0 * w, np.zeros(3)])
        drift = drift_acceleration(x, n)
        d_hdd_p = 2.0 * (drift + u) + 2.0 * np.array([3 * n ** 2 * w[0], 0.0, -n ** 2 * w[2]])
        d_hdd_v = 4.0 * v + 2.0 * np.array([-2 * n * w[1], 2 * n * w[0], 0.0])
        d_hdd = np.concatenate([d_hdd_p, d_hdd_v])
        coeff = 1.0 + sgn * hdd / um + self.gamma * abs(hd) / um
        return coeff * d_hd + (abs(hd) / um) * d_hdd + self.gamma * d_h


@dataclass(frozen=True)
class ConeBarrier(_Degree2Barrier):
    """Approach corridor: h(x) = p.d / (||p|| ||d||) - cos(half_angle) >= 0.

    The apex (p = 0) is a genuine singularity; evaluation there raises
    rather than clamping, so modeling errors surface instead of hiding.
    """

    axis: np.ndarray
    half_angle: float
    gamma: float
    u_max_scalar: float
    apex_radius: float = 1e-6

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("cone axis must be a unit vector")
        if not 0.0 < self.half_angle < np.pi / 2.0:
            raise ValueError("half_angle must lie in (0, pi/2)")
        if self.gamma <= 0 or self.u_max_scalar <= 0:
            raise ValueError("gamma and u_max_scalar must be positive")
        object.__setattr__(self, "axis", axis)

    def _pos(self, x):
        p = np.asarray(x, dtype=float)[:3]
        rho = np.linalg.norm(p)
        if rho < self.apex_radius:
            raise ConeApexError("state at the corridor apex")
        return p, rho

    def value(self, x):
        p, rho = self._pos(x)
        return float(p @ self.axis) / rho - np.cos(self.half_angle)

    def grad_pos(self, x):
        p, rho = self._pos(x)
        p_hat = p / rho
        return (self.axis - (p_hat @ self.axis) * p_hat) / rho

    def hess_pos(self, x):
        p, rho = self._pos(x)
        p_hat = p / rho
        d = self.axis
        c = float(p_hat @ d)
        outer_dp = np.outer(d, p_hat)
        outer_pp = np.outer(p_hat, p_hat)
        return (-outer_dp - outer_dp.T - c * (np.eye(3) - 3.0 * outer_pp)) / rho ** 2


@dataclass(frozen=True)
class ClfSpec:
    """Quadratic CLF V = (x - goal)' P (x - goal) with a sigmoid-scheduled
    decay rate: fast decay demanded only near the goal so the stability
    constraint does not fight the barrier far away."""

    p_mat: np.ndarray
    goal: np.ndarray
    zeta_min: float
    zeta_max: float
    steepness: float
    midpoint: float

    def __post_init__(self):
        p = np.asarray(self.p_mat, dtype=float)
        scale = max(1.0, np.abs(p).max())
        if np.abs(p - p.T).max() > 1e-9 * scale:
            raise ValueError("P must be symmetric")
        try:
            np.linalg.cholesky(p)
        except np.linalg.LinAlgError as exc:
            raise ValueError("P must be positive definite") from exc
        if not 0.0 < self.zeta_min < self.zeta_max:
            raise ValueError("need 0 < zeta_min < zeta_max")
        object.__setattr__(self, "p_mat", 0.5 * (p + p.T))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))

    def value(self, x):
        e = np.asarray(x, dtype=float) - self.goal
        return float(e @ self.p_mat @ e)

    def state_grad(self, x):
        return 2.0 * self.p_mat @ (np.asarray(x, dtype=float) - self.goal)

    def decay_rate(self, x):
        dist = np.linalg.norm(np.asarray(x, dtype=float) - self.goal)
        spread = self.zeta_max - self.zeta_min
        return self.zeta_min + spread / (1.0 + np.exp(self.steepness * (dist - self.midpoint)))

    def margin_coeffs(self, x, n):
        """clf margin(x, u) = v0 + lu @ u; nonpositivity is the condition."""
        x = np.asarray(x, dtype=float)
        a_c, b_c = cwh_system_matrices(n)
        grad = self.state_grad(x)
        v0 = float(grad @ (a_c @ x)) + self.decay_rate(x) * self.value(x)
        return v0, b_c.T @ grad

    def margin(self, x, u, n):
        v0, lu = self.margin_coeffs(x, n)
        return v0 + float(lu @ np.asarray(u, dtype=float))
