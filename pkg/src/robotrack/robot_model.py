"""Three-wheel omni-directional robot: kinematics, dynamics, discrete model.

State vectors follow the layout ``[x_w, y_w, theta, vx_r, vy_r, omega]``:
position and heading in the world frame, velocities in the body frame.
Heading is kept unwrapped. Measurements are ``[x_w, y_w, theta]``.

All array functions broadcast over leading dimensions, so a particle cloud
of shape ``(N, 6)`` or a sigma-point stack of shape ``(N, 13, 6)`` can be
pushed through :func:`discrete_transition` in one call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, fields

import numpy as np

from .numerics import wrap_angle

STATE_DIM = 6
MEAS_DIM = 3
INPUT_DIM = 3
HEADING = 2
STATE_LABELS = ("x_w", "y_w", "theta", "vx_r", "vy_r", "omega")

_S3 = np.sqrt(3.0)


class SingularInertia(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot and its DC motors (SI units).

    The defaults are an F-180 sized robot whose motor constants were solved
    so that full supply voltage gives roughly 1.25 m/s top speed and
    1.5 m/s^2 peak linear acceleration.
    """

    m: float = 2.0
    I0: float = 0.02
    r: float = 0.027
    L: float = 0.08
    Ngear: float = 9.0
    J0: float = 1.2e-6
    KT: float = 0.02
    KG: float = 0.02
    Ra: float = 27.0
    b0: float = 1e-6
    La: float = 1e-4  # kept for completeness; electrical dynamics are neglected
    supply_voltage: float = 6.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"robot parameter {f.name} must be positive, got {value!r}")

    @property
    def a1(self) -> float:
        return self.J0 * self.Ngear**2 / self.r**2

    @property
    def a2(self) -> float:
        return -(self.Ngear**2 / self.r**2) * (self.KT * self.KG / self.Ra + self.b0)

    @property
    def a3(self) -> float:
        return self.KT * self.Ngear / (self.Ra * self.r)

    @property
    def inertia(self) -> np.ndarray:
        return np.diag([self.m, self.m, self.I0])

    @property
    def A22(self) -> np.ndarray:
        """Diagonal velocity-decay matrix of the linearized dynamics."""
        lin = 3.0 * self.a2 / (2.0 * self.m + 3.0 * self.a1)
        rot = 3.0 * self.a2 / (self.I0 / self.L**2 + 3.0 * self.a1)
        return np.diag([lin, lin, rot])

    @property
    def B2(self) -> np.ndarray:
        """Voltage-to-acceleration matrix of the linearized dynamics."""
        k = 2.0 * self.m * self.L / self.I0
        return (self.a3 / (2.0 * self.m)) * np.array(
            [[2.0, -1.0, -1.0], [0.0, _S3, -_S3], [k, k, k]]
        )


def rotation_p0(theta: float) -> np.ndarray:
    s, c = np.sin(theta), np.cos(theta)
    return np.array([[s, c, 0.0], [-c, s, 0.0], [0.0, 0.0, 1.0]])


def wheel_coupling_p1(L: float) -> np.ndarray:
    if L <= 0:
        raise ValueError("body radius must be positive")
    return np.array([[1.0, 0.0, L], [-0.5, _S3 / 2, L], [-0.5, -_S3 / 2, L]])


def body_to_wheel(v_r, params: RobotParams) -> np.ndarray:
    """Wheel angular rates for a body-frame velocity ``[vx, vy, omega]``."""
    return (params.Ngear / params.r) * (np.asarray(v_r, dtype=float) @ wheel_coupling_p1(params.L).T)


def wheel_to_body(phi_dot, params: RobotParams) -> np.ndarray:
    P1 = wheel_coupling_p1(params.L)
    return (params.r / params.Ngear) * np.linalg.solve(P1, np.asarray(phi_dot, dtype=float))


def wheel_to_world(phi_dot, theta: float, params: RobotParams) -> np.ndarray:
    return rotation_p0(theta) @ wheel_to_body(phi_dot, params)


def continuous_accel(state, u, params: RobotParams) -> np.ndarray:
    """Body-frame acceleration ``[ax, ay, alpha]`` of the continuous dynamics."""
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    vx, vy, w = state[3:6]
    P1 = wheel_coupling_p1(params.L)
    Iinv = np.diag(1.0 / np.diag(params.inertia))
    G = Iinv @ P1.T @ P1
    H = np.eye(3) + params.a1 * G
    rhs = np.array([w * vy, -w * vx, 0.0]) + params.a2 * G @ state[3:6] + params.a3 * Iinv @ P1.T @ u
    if abs(np.linalg.det(H)) < 1e-12:
        raise SingularInertia("generalized inertia matrix is singular")
    return np.linalg.solve(H, rhs)


def discrete_transition(x, u, T: float, params: RobotParams) -> np.ndarray:
    """One step of the linearized discrete-time model (noise free).

    Position advances by ``P0(theta) v T`` using the heading at the start of
    the step; velocities decay through ``I + A22 T`` and are driven by
    ``B2 T u``.
    """
    return _transition(x, u, T, 1.0 + T * np.diag(params.A22), T * params.B2.T)


def _transition(x, u, T, decay, TB2t):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 1 and u.ndim == 1:
        return _transition_single(x, u, T, decay, TB2t)
    th = x[..., 2]
    vx, vy = x[..., 3], x[..., 4]
    s, c = np.sin(th), np.cos(th)
    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (STATE_DIM,)))
    out[..., 0] = x[..., 0] + T * (s * vx + c * vy)
    out[..., 1] = x[..., 1] + T * (s * vy - c * vx)
    out[..., 2] = th + T * x[..., 5]
    out[..., 3:6] = x[..., 3:6] * decay + u @ TB2t
    return out


def _transition_single(x, u, T, decay, TB2t):
    # scalar arithmetic is several times faster than ufuncs on 6-vectors
    x0, x1, th, vx, vy, w = x.tolist()
    s, c = math.sin(th), math.cos(th)
    out = np.empty(STATE_DIM)
    out[0] = x0 + T * (s * vx + c * vy)
    out[1] = x1 + T * (s * vy - c * vx)
    out[2] = th + T * w
    out[3:6] = x[3:6] * decay + u @ TB2t
    return out


def transition_jacobians(x, u, T: float, params: RobotParams):
    """Jacobians ``(F_x, F_u, F_v)`` of :func:`discrete_transition` at ``x``."""
    x = np.asarray(x, dtype=float)
    th, vx, vy = x[2], x[3], x[4]
    s, c = np.sin(th), np.cos(th)
    Fx = np.eye(STATE_DIM)
    Fx[0:3, 3:6] = rotation_p0(th) * T
    Fx[0, 2] = T * (c * vx - s * vy)
    Fx[1, 2] = T * (s * vx + c * vy)
    Fx[3:6, 3:6] += T * params.A22
    Fu = np.zeros((STATE_DIM, INPUT_DIM))
    Fu[3:6] = T * params.B2
    return Fx, Fu, np.eye(STATE_DIM)


def measure(x, w=None) -> np.ndarray:
    y = np.array(np.asarray(x, dtype=float)[..., :3], copy=True)
    if w is not None:
        y = y + w
    return y


def measurement_jacobians():
    Hx = np.zeros((MEAS_DIM, STATE_DIM))
    Hx[:, :3] = np.eye(3)
    return Hx, np.eye(MEAS_DIM)


def performance_envelope(params: RobotParams) -> dict:
    """Top linear speed and peak linear acceleration under the voltage bound.

    Both extremes are attained at vertices of the voltage box, so the eight
    sign patterns are enumerated. Speed is the steady state of the velocity
    dynamics, acceleration is measured from rest.
    """
    V = params.supply_voltage
    A22, B2 = params.A22, params.B2
    best_v = best_a = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=3):
        u = V * np.array(signs)
        acc = B2 @ u
        v_ss = -np.linalg.solve(A22, acc)
        best_a = max(best_a, float(np.hypot(acc[0], acc[1])))
        best_v = max(best_v, float(np.hypot(v_ss[0], v_ss[1])))
    return {"max_speed": best_v, "max_linear_accel": best_a}


class RobotModel:
    """Process/measurement model of the robot in the form the filters consume.

    Parameters
    ----------
    params : RobotParams
    T : float
        Sampling period in seconds.
    Q : ndarray (6, 6)
        Per-step additive process-noise covariance.
    R : ndarray (3, 3)
        Gaussian measurement-noise covariance.
    """

    n = STATE_DIM
    m = MEAS_DIM
    angle_index = HEADING

    def __init__(self, params: RobotParams, T: float, Q: np.ndarray, R: np.ndarray):
        if T <= 0:
            raise ValueError("sampling period must be positive")
        self.params = params
        self.T = float(T)
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.H = measurement_jacobians()[0]
        self._decay = 1.0 + self.T * np.diag(params.A22)
        self._TB2t = self.T * params.B2.T
        self._Fx = np.eye(STATE_DIM)
        self._Fx[3:6, 3:6] += self.T * params.A22

    def f(self, x, u):
        return _transition(x, u, self.T, self._decay, self._TB2t)

    def jac_f(self, x, u):
        T = self.T
        th, vx, vy = x[2], x[3], x[4]
        s, c = np.sin(th), np.cos(th)
        F = self._Fx.copy()
        F[0, 2] = T * (c * vx - s * vy)
        F[1, 2] = T * (s * vx + c * vy)
        F[0, 3], F[0, 4] = T * s, T * c
        F[1, 3], F[1, 4] = -T * c, T * s
        F[2, 5] = T
        return F

    def h(self, x):
        return measure(x)

    def jac_h(self, x):
        return self.H

    def residual(self, y, yhat):
        d = np.asarray(y, dtype=float) - yhat
        d[..., HEADING] = wrap_angle(d[..., HEADING])
        return d
