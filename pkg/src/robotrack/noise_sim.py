"""Seeded noise processes, reference trajectories and the run simulator."""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .numerics import cholesky, wrap_angle
from .robot_model import RobotParams, discrete_transition, rotation_p0

N_POINTS = 601
DEFAULT_T = 1.0 / 30.0

# Independent sub-streams of one (trajectory, seed) run.
STREAM_PROCESS = 0
STREAM_MEASUREMENT = 1
STREAM_BERNOULLI = 2
STREAM_RELOCATION = 3
STREAM_FILTER = 4


class InvalidTrajectoryId(ValueError):
    pass


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream identified by ``(seed, *key)``.

    Streams are keyed by value, never by call order, so a run produces the
    same numbers whether it is executed serially or in a worker pool.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class NoiseConfig:
    """Process and measurement noise of the benchmark.

    ``q_sigmas`` are the rate standard deviations of the process model, in
    state order: world velocities for the pose components and body
    accelerations for the velocity components. The per-step covariance is
    ``Q * T**2`` (see :meth:`process_cov`).
    """

    q_sigmas: tuple = (0.067, 0.067, 0.2, 2.0, 2.0, 2.0)
    r_sigmas: tuple = (0.005, 0.005, 0.020)
    outlier_prob: float = 0.02
    court_x: float = 2.45
    court_y: float = 1.70
    heading_range: float = np.pi
    clean_first_frame: bool = True
    truth_process_noise: bool = False

    def __post_init__(self):
        if len(self.q_sigmas) != 6 or len(self.r_sigmas) != 3:
            raise ValueError("q_sigmas needs 6 entries and r_sigmas 3")
        if any(s < 0 for s in self.q_sigmas) or any(s < 0 for s in self.r_sigmas):
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.outlier_prob < 1.0:
            raise ValueError("outlier_prob must lie in [0, 1)")
        if self.court_x <= 0 or self.court_y <= 0 or self.heading_range <= 0:
            raise ValueError("court extents must be positive")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.square(self.q_sigmas))

    @property
    def R(self) -> np.ndarray:
        return np.diag(np.square(self.r_sigmas))

    def process_cov(self, T: float) -> np.ndarray:
        return self.Q * T**2


def draw_gaussian(rng: np.random.Generator, cov: np.ndarray, size: Optional[int] = None) -> np.ndarray:
    """Zero-mean Gaussian sample(s) ``L z`` with ``L = cholesky(cov)``."""
    L = cholesky(cov)
    n = L.shape[0]
    if size is None:
        return L @ rng.standard_normal(n)
    return rng.standard_normal((size, n)) @ L.T


def draw_relocation(rng: np.random.Generator, cfg: NoiseConfig, true_pose) -> Optional[np.ndarray]:
    """Offset that teleports the measured pose uniformly over the court.

    Returns ``None`` when the Bernoulli draw does not fire. Consumes exactly
    one uniform from ``rng`` plus three more when it fires.
    """
    if rng.random() >= cfg.outlier_prob:
        return None
    target = rng.uniform(
        [-cfg.court_x, -cfg.court_y, -cfg.heading_range],
        [cfg.court_x, cfg.court_y, cfg.heading_range],
    )
    return target - np.asarray(true_pose, dtype=float)[:3]


# ---------------------------------------------------------------------------
# Reference trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceTrajectory:
    id: int
    name: str
    states: np.ndarray
    inputs: np.ndarray
    T: float

    @property
    def length(self) -> int:
        return len(self.states)


def _ramp(t, t_ramp):
    return np.clip(t / t_ramp, 0.0, 1.0)


def _straight(t):
    d = np.array([4.0, 2.8]) / np.hypot(4.0, 2.8)
    v = 0.24 * _ramp(t, 0.5) * d
    return v[0], v[1], 0.0


def _accel_brake(t):
    leg, tl = divmod(t, 5.0)
    sign = 1.0 if int(leg) % 2 == 0 else -1.0
    if tl < 2.0:
        s = 0.5 * tl
    elif tl < 4.0:
        s = 1.0 - 0.5 * (tl - 2.0)
    else:
        s = 0.0
    return sign * s, 0.0, 0.0


def _square(t):
    dirs = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
    dx, dy = dirs[int(t // 2.0) % 4]
    s = 0.6 * _ramp(t, 0.3)
    return s * dx, s * dy, 0.0


def _circle(t, radius=1.0, speed=0.8, t_ramp=1.0):
    s = speed * _ramp(t, t_ramp)
    arc = speed * (0.5 * t * t / t_ramp if t < t_ramp else 0.5 * t_ramp + (t - t_ramp))
    phi = arc / radius
    return -s * np.sin(phi), s * np.cos(phi), s / radius


def _ellipse(t, a=1.8, b=1.0, rate=2 * np.pi / 10.0, t_ramp=1.0):
    psi_dot = rate * _ramp(t, t_ramp)
    psi = rate * (0.5 * t * t / t_ramp if t < t_ramp else 0.5 * t_ramp + (t - t_ramp))
    s, c = np.sin(psi), np.cos(psi)
    turn = a * b / (a * a * s * s + b * b * c * c)
    return -a * s * psi_dot, b * c * psi_dot, turn * psi_dot


def _zigzag(t):
    forward = 0.2 if t < 10.0 else -0.2
    seg = int(t // 2.0)
    side = 0.5 if seg % 2 == 0 else -0.5
    spin = 1.0 if seg % 2 == 0 else -1.0
    k = _ramp(t, 0.3)
    return k * forward, k * side, k * spin


# id -> (name, start pose, desired world velocity / turn rate schedule)
TRAJECTORY_SPECS: dict[int, tuple[str, tuple, Callable]] = {
    1: ("straight", (-2.0, -1.4, 0.3), _straight),
    2: ("accel_brake", (-1.0, 0.5, 0.0), _accel_brake),
    3: ("square_turns", (-0.6, -0.6, np.pi / 2), _square),
    4: ("circle", (1.0, 0.0, 0.0), _circle),
    5: ("ellipse", (1.8, 0.0, 0.0), _ellipse),
    6: ("zigzag", (-2.0, -0.5, 0.0), _zigzag),
}


def reference_trajectory(
    traj_id: int,
    params: RobotParams = RobotParams(),
    T: float = DEFAULT_T,
    n_points: int = N_POINTS,
) -> ReferenceTrajectory:
    """Noise-free reference trajectory ``traj_id`` (1..6).

    A feed-forward planner inverts the discrete velocity dynamics to follow
    a desired world-frame velocity and turn-rate schedule; commands that
    exceed the supply voltage are scaled down, so sharp corners come out
    rounded by the actuator limits. The states are then exactly a roll-out
    of :func:`discrete_transition`.
    """
    if traj_id not in TRAJECTORY_SPECS:
        raise InvalidTrajectoryId(f"trajectory id must be one of 1..6, got {traj_id!r}")
    name, start, schedule = TRAJECTORY_SPECS[traj_id]
    decay = np.eye(3) + T * params.A22
    BT_inv = np.linalg.inv(T * params.B2)
    V = params.supply_voltage

    states = np.zeros((n_points, 6))
    inputs = np.zeros((n_points, 3))
    states[0, :3] = start
    for k in range(n_points - 1):
        x = states[k]
        vwx, vwy, w_des = schedule((k + 1) * T)
        th_next = x[2] + T * x[5]
        v_des = rotation_p0(th_next).T @ np.array([vwx, vwy, w_des])
        u = BT_inv @ (v_des - decay @ x[3:6])
        peak = np.max(np.abs(u))
        if peak > V:
            u *= V / peak
        inputs[k] = u
        states[k + 1] = discrete_transition(x, u, T, params)
    return ReferenceTrajectory(traj_id, name, states, inputs, T)


# ---------------------------------------------------------------------------
# Run simulation
# ---------------------------------------------------------------------------

@dataclass
class SimRun:
    trajectory_id: int
    seed: int
    ideal: np.ndarray
    measurements: np.ndarray
    outlier_flags: np.ndarray
    inputs: np.ndarray = field(repr=False, default=None)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "x_ideal", "y_ideal", "theta_ideal", "x_meas", "y_meas", "theta_meas", "outlier"])
            for k, (s, y, flag) in enumerate(zip(self.ideal, self.measurements, self.outlier_flags)):
                w.writerow([k, *(f"{v:.9g}" for v in s[:3]), *(f"{v:.9g}" for v in y), int(flag)])


def simulate_run(
    traj: ReferenceTrajectory,
    cfg: NoiseConfig,
    seed: int,
    params: RobotParams = RobotParams(),
) -> SimRun:
    """Noisy measurement stream for one trajectory and seed.

    Each frame gets Gaussian noise with covariance ``R``; with probability
    ``outlier_prob`` the measured pose is instead relocated uniformly over
    the court. Measured headings are wrapped to (-pi, pi].
    """
    n = traj.length
    rng_meas = make_rng(seed, traj.id, STREAM_MEASUREMENT)
    rng_bern = make_rng(seed, traj.id, STREAM_BERNOULLI)
    rng_reloc = make_rng(seed, traj.id, STREAM_RELOCATION)

    ideal = np.array(traj.states, copy=True)
    if cfg.truth_process_noise:
        rng_proc = make_rng(seed, traj.id, STREAM_PROCESS)
        Lq = cholesky(cfg.process_cov(traj.T))
        for k in range(n - 1):
            ideal[k + 1] = discrete_transition(ideal[k], traj.inputs[k], traj.T, params) + Lq @ rng_proc.standard_normal(6)

    r = np.asarray(cfg.r_sigmas, dtype=float)
    # diagonal R: scaling by sigmas equals L z with L = chol(R), and also
    # handles the degenerate zero-noise configuration
    gauss = rng_meas.standard_normal((n, 3)) * r
    fires = rng_bern.random(n) < cfg.outlier_prob
    if cfg.clean_first_frame:
        fires[0] = False
    meas = ideal[:, :3] + gauss
    lo = np.array([-cfg.court_x, -cfg.court_y, -cfg.heading_range])
    targets = rng_reloc.uniform(lo, -lo, size=(n, 3))
    meas[fires] = targets[fires]
    meas[:, 2] = wrap_angle(meas[:, 2])
    return SimRun(traj.id, seed, ideal, meas, fires, traj.inputs)
