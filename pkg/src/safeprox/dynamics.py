"""Clohessy-Wiltshire-Hill relative motion in the LVLH frame.

States are plain float64 arrays: x = (x1, x2, x3, v1, v2, v3) with
positions [m] along R-bar, V-bar, H-bar and velocities [m/s]; controls
are commanded accelerations u = (u1, u2, u3) [m/s^2]. The closed-form
transition is kept alongside the ZOH path as an independent oracle.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import zoh_discretize


@dataclass(frozen=True)
class OrbitParams:
    """Circular reference orbit; mean motion n = sqrt(mu / a^3)."""

    mu: float
    altitude: float
    body_radius: float
    n: float

    def __post_init__(self):
        a = self.body_radius + self.altitude
        n_check = np.sqrt(self.mu / a ** 3)
        if abs(self.n - n_check) > 1e-12 * n_check:
            raise ValueError(
                f"mean motion {self.n} inconsistent with mu/altitude "
                f"(expected {n_check})")

    @classmethod
    def from_altitude(cls, mu, body_radius, altitude):
        a = body_radius + altitude
        return cls(mu=mu, altitude=altitude, body_radius=body_radius,
                   n=float(np.sqrt(mu / a ** 3)))


def cwh_system_matrices(n):
    """Continuous-time (a_c, b_c) of the CWH equations at mean motion n."""
    a_c = np.zeros((6, 6))
    a_c[0, 3] = 1.0
    a_c[1, 4] = 1.0
    a_c[2, 5] = 1.0
    a_c[3, 0] = 3.0 * n ** 2
    a_c[3, 4] = 2.0 * n
    a_c[4, 3] = -2.0 * n
    a_c[5, 2] = -n ** 2
    b_c = np.zeros((6, 3))
    b_c[3:, :] = np.eye(3)
    return a_c, b_c


def drift_acceleration(x, n):
    """Acceleration of the uncontrolled CWH flow at state x."""
    return np.array([
        3.0 * n ** 2 * x[0] + 2.0 * n * x[4],
        -2.0 * n * x[3],
        -n ** 2 * x[2],
    ])


def cwh_derivative(x, u, n):
    """Time derivative of the state under CWH dynamics with input u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.isfinite(x).all() and np.isfinite(u).all()):
        raise ValueError("non-finite state or control")
    return np.concatenate([x[3:], drift_acceleration(x, n) + u])


def discretize_cwh(n, ts):
    """ZOH discretization of the CWH pair at sample time ts."""
    a_c, b_c = cwh_system_matrices(n)
    return zoh_discretize(a_c, b_c, ts)


def step(x, u, model):
    """One exact ZOH propagation step x+ = a_d x + b_d u."""
    return model.a_d @ np.asarray(x, dtype=float) + model.b_d @ np.asarray(u, dtype=float)


def cwh_transition_matrix(n, t):
    """Closed-form CWH state-transition matrix (textbook sin/cos solution)."""
    s = np.sin(n * t)
    c = np.cos(n * t)
    phi = np.zeros((6, 6))
    # position rows
    phi[0, 0] = 4.0 - 3.0 * c
    phi[0, 3] = s / n
    phi[0, 4] = 2.0 * (1.0 - c) / n
    phi[1, 0] = 6.0 * (s - n * t)
    phi[1, 1] = 1.0
    phi[1, 3] = 2.0 * (c - 1.0) / n
    phi[1, 4] = (4.0 * s - 3.0 * n * t) / n
    phi[2, 2] = c
    phi[2, 5] = s / n
    # velocity rows
    phi[3, 0] = 3.0 * n * s
    phi[3, 3] = c
    phi[3, 4] = 2.0 * s
    phi[4, 0] = 6.0 * n * (c - 1.0)
    phi[4, 3] = -2.0 * s
    phi[4, 4] = 4.0 * c - 3.0
    phi[5, 2] = -n * s
    phi[5, 5] = c
    return phi


def closed_form_transition(x0, t, n):
    """Uncontrolled CWH propagation by the analytic solution; oracle for
    the matrix-exponential discretization path."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return np.asarray(x0, dtype=float).copy()
    return cwh_transition_matrix(n, t) @ np.asarray(x0, dtype=float)


def perturbed_step(x, u, model, rng, w_max):
    """ZOH step with a bounded uniform acceleration disturbance drawn from
    the supplied generator; w_max = 0 reduces exactly to step()."""
    if w_max < 0:
        raise ValueError("w_max must be nonnegative")
    if w_max == 0.0:
        return step(x, u, model)
    w = rng.uniform(-w_max, w_max, size=3)
    return step(x, np.asarray(u, dtype=float) + w, model)
