"""Quaternion algebra and zero-gravity rigid-body dynamics.

Quaternions are scalar-first ``(w, a, b, c)`` numpy arrays. Every function
broadcasts over leading batch dimensions, so the same code steps a single
free-flyer or a batch of thousands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_MASS = 9.0877
CUBE_SIDE = 0.305
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def cube_inertia(mass, side=CUBE_SIDE):
    """Principal inertia of a homogeneous cube, ``m s^2 / 6`` on every axis."""
    mass = np.asarray(mass, dtype=float)
    return np.repeat((mass * side**2 / 6.0)[..., None], 3, axis=-1)


def quat_mul(p, q):
    """Hamilton product ``p ⊗ q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, pa, pb, pc = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qa, qb, qc = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - pa * qa - pb * qb - pc * qc,
            pw * qa + pa * qw + pb * qc - pc * qb,
            pw * qb - pa * qc + pb * qw + pc * qa,
            pw * qc + pa * qb - pb * qa + pc * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonical(q):
    """Flip to the ``w >= 0`` hemisphere."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_error(current, goal):
    """Rotation taking ``current`` to ``goal``, expressed in the current body frame."""
    return quat_canonical(quat_mul(quat_conjugate(current), goal))


def quat_angle(q):
    """Geodesic rotation angle in ``[0, pi]``."""
    w = np.abs(np.asarray(q, dtype=float)[..., 0])
    return 2.0 * np.arccos(np.clip(w, 0.0, 1.0))


def quat_to_axis_angle(q):
    """Rotation vector (axis times angle) of the shortest rotation represented by ``q``."""
    q = quat_canonical(q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    # small-angle limit of angle / s is 2
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return vec * scale


def quat_exp(rotvec):
    """Unit quaternion for a rotation vector (exponential map)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle -> 1/2 as angle -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5)
    return np.concatenate([np.cos(half), rotvec * k], axis=-1)


def quat_rotate(q, v):
    """Rotate vector ``v`` from body to world frame by unit quaternion ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


@dataclass
class BodyState:
    """Pose and twist of one or more free-flyers.

    ``position`` and ``lin_vel`` are world-frame, ``ang_vel`` is body-frame and
    ``attitude`` maps body to world. Arrays may carry a leading batch axis.
    """

    position: np.ndarray
    attitude: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray

    @classmethod
    def at_rest(cls, batch=None):
        shape = () if batch is None else (batch,)
        return cls(
            position=np.zeros(shape + (3,)),
            attitude=np.broadcast_to(IDENTITY_QUAT, shape + (4,)).copy(),
            lin_vel=np.zeros(shape + (3,)),
            ang_vel=np.zeros(shape + (3,)),
        )

    def copy(self):
        return BodyState(
            self.position.copy(), self.attitude.copy(), self.lin_vel.copy(), self.ang_vel.copy()
        )

    def __getitem__(self, idx):
        return BodyState(
            self.position[idx], self.attitude[idx], self.lin_vel[idx], self.ang_vel[idx]
        )

    def is_finite(self):
        return (
            np.isfinite(self.position).all(axis=-1)
            & np.isfinite(self.attitude).all(axis=-1)
            & np.isfinite(self.lin_vel).all(axis=-1)
            & np.isfinite(self.ang_vel).all(axis=-1)
        )


@dataclass
class MassProps:
    mass: np.ndarray | float = BASE_MASS
    inertia_diag: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.inertia_diag is None:
            self.inertia_diag = cube_inertia(self.mass)
        self.inertia_diag = np.asarray(self.inertia_diag, dtype=float)
        if np.any(self.mass <= 0) or np.any(self.inertia_diag <= 0):
            raise ValueError("mass and inertia must be positive")

    @classmethod
    def scaled(cls, mass, reference_mass=BASE_MASS, reference_inertia=None):
        """Inertia scaled proportionally with mass at fixed geometry."""
        mass = np.asarray(mass, dtype=float)
        if reference_inertia is None:
            reference_inertia = cube_inertia(reference_mass)
        ratio = (mass / reference_mass)[..., None]
        return cls(mass, ratio * np.asarray(reference_inertia, dtype=float))


@dataclass
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    @classmethod
    def from_action(cls, action, f_max, tau_max):
        action = np.asarray(action, dtype=float)
        return cls(
            np.clip(action[..., :3], -f_max, f_max),
            np.clip(action[..., 3:6], -tau_max, tau_max),
        )

    def as_array(self):
        return np.concatenate([self.force, self.torque], axis=-1)


def step_dynamics(state, props, wrench, dt, body_frame_force=False):
    """Advance one semi-implicit Euler step with no gravity.

    Velocities are updated first and the new velocities drive the pose
    update. Attitude is advanced through the exponential map of the body
    rate and renormalized.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    force = np.asarray(wrench.force, dtype=float)
    torque = np.asarray(wrench.torque, dtype=float)
    if not (np.isfinite(force).all() and np.isfinite(torque).all()):
        raise ValueError("wrench must be finite")
    if body_frame_force:
        force = quat_rotate(state.attitude, force)

    mass = np.asarray(props.mass, dtype=float)[..., None]
    inertia = props.inertia_diag

    lin_vel = state.lin_vel + (force / mass) * dt
    position = state.position + lin_vel * dt

    w = state.ang_vel
    gyro = np.cross(w, inertia * w)
    ang_vel = w + (torque - gyro) / inertia * dt

    attitude = quat_normalize(quat_mul(state.attitude, quat_exp(ang_vel * dt)))
    return BodyState(position, attitude, lin_vel, ang_vel)
