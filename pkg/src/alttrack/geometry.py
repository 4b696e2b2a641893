"""Box parameterisation, box differences and planar frame transforms.

A box is a 9-vector ``[cx, cy, cz, w, l, h, yaw, vx, vy]``.  Ego poses are
planar: a 3-d translation plus a heading about the z axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import ContractError, wrap_angle

BOX_DIM = 9
YAW = 6
CENTER = slice(0, 3)
SIZE = slice(3, 6)
VELOCITY = slice(7, 9)


def _normalize_yaw(yaw: float) -> float:
    return float(wrap_angle(yaw))


@dataclass(frozen=True)
class BoxState:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float]

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        velocity = tuple(float(v) for v in self.velocity)
        if len(center) != 3 or len(size) != 3 or len(velocity) != 2:
            raise ContractError("BoxState needs a 3-d center, 3-d size and 2-d velocity")
        if min(size) <= 0.0:
            raise ContractError(f"BoxState size must be positive, got {size}")
        values = center + size + velocity + (float(self.yaw),)
        if not all(math.isfinite(v) for v in values):
            raise ContractError("BoxState has non-finite values")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "velocity", velocity)
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))

    def to_vector(self) -> np.ndarray:
        return np.array([*self.center, *self.size, self.yaw, *self.velocity])

    @classmethod
    def from_vector(cls, vec, min_size: float | None = None) -> "BoxState":
        """Build from a 9-vector; ``min_size`` clamps regressed sizes to stay positive."""
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        if v.size != BOX_DIM:
            raise ContractError(f"box vector needs {BOX_DIM} entries, got {v.size}")
        size = v[SIZE] if min_size is None else np.maximum(v[SIZE], min_size)
        return cls(tuple(v[CENTER]), tuple(size), float(v[YAW]), tuple(v[VELOCITY]))


@dataclass(frozen=True)
class EgoPose:
    translation: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        t = tuple(float(x) for x in self.translation)
        if len(t) != 3:
            raise ContractError("EgoPose translation must be 3-d")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))

    def to_vector(self) -> np.ndarray:
        return np.array([*self.translation, self.yaw])

    @classmethod
    def from_vector(cls, vec) -> "EgoPose":
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        return cls(tuple(v[:3]), float(v[3]))


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def box_abs_diff(track_box: BoxState | np.ndarray, det_box: BoxState | np.ndarray) -> np.ndarray:
    """|track - det| per parameter, with the yaw difference wrapped to [0, pi]."""
    a = track_box.to_vector() if isinstance(track_box, BoxState) else np.asarray(track_box, float)
    b = det_box.to_vector() if isinstance(det_box, BoxState) else np.asarray(det_box, float)
    d = a - b
    d[..., YAW] = wrap_angle(d[..., YAW])
    return np.abs(d)


def pairwise_abs_diff(track_vecs: np.ndarray, det_vecs: np.ndarray) -> np.ndarray:
    """[N_D, N_T, 9] array whose entry (j, i) is box_abs_diff(track i, det j)."""
    t = np.asarray(track_vecs, dtype=np.float64)
    d = np.asarray(det_vecs, dtype=np.float64)
    return box_abs_diff(t[None, :, :], d[:, None, :])


def propagate_reference(center, velocity, dt: float) -> np.ndarray:
    """Constant-velocity step of a 3-d reference point; z is left unchanged."""
    if dt < 0:
        raise ContractError(f"propagate_reference: negative time step {dt}")
    c = np.array(center, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    c[..., 0] += v[..., 0] * dt
    c[..., 1] += v[..., 1] * dt
    return c


def ego_compensate(points, pose_t: EgoPose, pose_next: EgoPose) -> np.ndarray:
    """Re-express points from the vehicle frame at t in the vehicle frame at t+1."""
    p = np.array(points, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    t0 = np.asarray(pose_t.translation)
    t1 = np.asarray(pose_next.translation)
    world = p.copy()
    world[:, :2] = p[:, :2] @ _rot(pose_t.yaw).T + t0[:2]
    world[:, 2] = p[:, 2] + t0[2]
    out = world.copy()
    out[:, :2] = (world[:, :2] - t1[:2]) @ _rot(pose_next.yaw)
    out[:, 2] = world[:, 2] - t1[2]
    return out[0] if single else out


def boxes_to_world(vecs: np.ndarray, pose: EgoPose) -> np.ndarray:
    """Vehicle-frame box vectors to world-frame box vectors (center, yaw, velocity)."""
    v = np.array(vecs, dtype=np.float64).reshape(-1, BOX_DIM)
    R = _rot(pose.yaw)
    t = np.asarray(pose.translation)
    out = v.copy()
    out[:, :2] = v[:, :2] @ R.T + t[:2]
    out[:, 2] = v[:, 2] + t[2]
    out[:, YAW] = wrap_angle(v[:, YAW] + pose.yaw)
    out[:, 7:9] = v[:, 7:9] @ R.T
    return out


def boxes_to_ego(vecs: np.ndarray, pose: EgoPose) -> np.ndarray:
    """Inverse of :func:`boxes_to_world`."""
    v = np.array(vecs, dtype=np.float64).reshape(-1, BOX_DIM)
    R = _rot(pose.yaw)
    t = np.asarray(pose.translation)
    out = v.copy()
    out[:, :2] = (v[:, :2] - t[:2]) @ R
    out[:, 2] = v[:, 2] - t[2]
    out[:, YAW] = wrap_angle(v[:, YAW] - pose.yaw)
    out[:, 7:9] = v[:, 7:9] @ R
    return out
