"""Pinhole camera, axis-angle SE(3) poses, projection and inverse warping.

Conventions: camera x right, y down, z forward.  A relative pose maps a
point expressed in the target camera frame into the source camera frame,
``X_src = R @ X_tgt + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Variable, route, value_of

Z_EPS = 1e-3
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise ValueError("principal point lies outside the raster")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def downscaled(self, factor: int) -> "Intrinsics":
        """Intrinsics for a raster mean-pooled by ``factor`` in each axis."""
        f = float(factor)
        return Intrinsics(
            self.fx / f, self.fy / f, (self.cx + 0.5) / f - 0.5, (self.cy + 0.5) / f - 0.5
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True)
class PoseParams:
    """Axis-angle rotation (radians * unit axis) plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("pose parameters must be finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "PoseParams":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vec) -> "PoseParams":
        v = np.asarray(vec, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    @classmethod
    def from_matrix(cls, R: np.ndarray, t: np.ndarray) -> "PoseParams":
        return cls(matrix_to_axis_angle(R), t)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = axis_angle_to_matrix(self.rotation)
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "PoseParams") -> "PoseParams":
        """``self ∘ other``: apply ``other`` first."""
        T = self.matrix() @ other.matrix()
        return PoseParams.from_matrix(T[:3, :3], T[:3, 3])

    def inverse(self) -> "PoseParams":
        R = axis_angle_to_matrix(self.rotation)
        return PoseParams.from_matrix(R.T, -R.T @ self.translation)

    def to_dict(self) -> dict:
        return {"axis_angle": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseParams":
        return cls(np.array(d["axis_angle"], dtype=float), np.array(d["translation"], dtype=float))


def relative_pose(world_from_target: PoseParams, world_from_source: PoseParams) -> PoseParams:
    """Pose mapping target-camera points into the source camera."""
    return world_from_source.inverse().compose(world_from_target)


# -- rotations ---------------------------------------------------------------


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _rodrigues(r: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(r))
    K = _hat(r)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def _rodrigues_vjp(r: np.ndarray, R: np.ndarray, g: np.ndarray) -> np.ndarray:
    theta2 = float(r @ r)
    out = np.empty(3)
    if theta2 < _SMALL_ANGLE**2:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = np.sum(g * _hat(e))
        return out
    I_minus_R = np.eye(3) - R
    K = _hat(r)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        dR = (r[i] * K + _hat(np.cross(r, I_minus_R @ e))) @ R / theta2
        out[i] = np.sum(g * dR)
    return out


def axis_angle_to_matrix(rotation):
    """Rodrigues map from an axis-angle 3-vector to a rotation matrix.

    Accepts a plain array or a :class:`Variable`; the gradient uses the
    closed-form derivative of the exponential map.
    """
    r = value_of(rotation).reshape(3)
    R = _rodrigues(r)
    return ad._node(R, [(rotation, lambda g: _rodrigues_vjp(r, R, g).reshape(value_of(rotation).shape))])


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-12:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        M = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(M), 0.0, None))
        k = int(np.argmax(axis))
        axis = M[:, k] / np.sqrt(M[k, k])
        return axis / np.linalg.norm(axis) * theta
    return theta / (2.0 * np.sin(theta)) * w


# -- projection --------------------------------------------------------------


class PixelFlow(NamedTuple):
    """Per-pixel source sample coordinates ``flow[..., 0] = u, flow[..., 1] = v``."""

    flow: object
    valid: np.ndarray


def pixel_rays(height: int, width: int, K: Intrinsics) -> np.ndarray:
    """Back-projected rays with unit z: ``K^-1 [x, y, 1]`` for every pixel."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)


def _split_pose(pose):
    if isinstance(pose, PoseParams):
        return pose.rotation, pose.translation
    if isinstance(pose, Variable) or np.ndim(pose) == 1:
        return ad.getitem(pose, slice(0, 3)), ad.getitem(pose, slice(3, 6))
    rot, trans = pose
    return rot, trans


def _project_op(depth, R, t, rays, K: Intrinsics):
    """Source pixel coordinates as grid offsets, so an identity pose maps pixels exactly.

    With ``P = R r + t / D`` (the camera point divided by depth) the sample is
    ``u = x + fx (P_x / P_z - r_x)`` and likewise for ``v``.
    """
    D = value_of(depth)
    Rv, tv = value_of(R), value_of(t)
    inv_d = 1.0 / D
    P = rays @ Rv.T + tv * inv_d[..., None]
    in_front = route(lambda: D * P[..., 2] > Z_EPS)
    pz = np.where(in_front, P[..., 2], Z_EPS)
    h, w = D.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = xs + K.fx * (P[..., 0] / pz - rays[..., 0])
    v = ys + K.fy * (P[..., 1] / pz - rays[..., 1])
    flow = np.stack([u, v], axis=-1)

    cache = {}

    def dP(g):
        if "dP" not in cache:
            gu, gv = g[..., 0], g[..., 1]
            d0 = gu * K.fx / pz
            d1 = gv * K.fy / pz
            dz = -(gu * K.fx * P[..., 0] + gv * K.fy * P[..., 1]) / pz**2
            dz = np.where(in_front, dz, 0.0)
            cache["dP"] = np.stack([d0, d1, dz], axis=-1)
        return cache["dP"]

    def vjp_depth(g):
        return -(dP(g) @ tv) * inv_d**2

    def vjp_R(g):
        return np.einsum("hwi,hwj->ij", dP(g), rays)

    def vjp_t(g):
        return np.einsum("hwi,hw->i", dP(g), inv_d)

    out = ad._node(flow, [(depth, vjp_depth), (R, vjp_R), (t, vjp_t)])
    return out, in_front


def project(depth, pose, K: Intrinsics, rays: np.ndarray | None = None) -> PixelFlow:
    """Project every target pixel through ``depth`` and ``pose`` into the source view.

    ``pose`` is a :class:`PoseParams`, a 6-vector (array or Variable) laid
    out as ``[axis_angle, translation]``, or a ``(rotation, translation)``
    pair.  Validity is false for points at or behind ``Z_EPS`` and for
    samples falling outside the raster before clamping.
    """
    D = value_of(depth)
    if D.ndim != 2:
        raise ValueError("depth must be 2-D")
    if not np.all(D > 0):
        raise ValueError("depth must be strictly positive")
    h, w = D.shape
    if rays is None:
        rays = pixel_rays(h, w, K)
    rot, trans = _split_pose(pose)
    R = axis_angle_to_matrix(rot)
    flow, in_front = _project_op(depth, R, trans, rays, K)
    fv = value_of(flow)
    inside = (fv[..., 0] >= 0) & (fv[..., 0] <= w - 1) & (fv[..., 1] >= 0) & (fv[..., 1] <= h - 1)
    return PixelFlow(flow, in_front & inside)


# -- sampling ----------------------------------------------------------------


def _axis_setup(coord: np.ndarray, size: int):
    """Clamp state and cell index along one axis (right/top sub-cell at integers)."""
    side = route(lambda: np.where(coord < 0, -1, np.where(coord > size - 1, 1, 0)).astype(np.int8))
    cc = np.where(side == 0, coord, np.where(side < 0, 0.0, float(size - 1)))
    if size == 1:
        cell = route(lambda: np.zeros(coord.shape, dtype=np.int64))
    else:
        cell = route(lambda: np.minimum(np.floor(cc), size - 2).astype(np.int64))
    return side, cc, cell


def bilinear_sample(source, flow) -> tuple[object, np.ndarray]:
    """Bilinearly sample ``source`` (H_s, W_s, C) at ``flow`` with clamp-to-edge.

    ``flow`` is a :class:`PixelFlow` or a raw ``(H, W, 2)`` array/Variable.
    Returns the sampled image and the validity mask (in-bounds and, for a
    PixelFlow, in front of the camera).  Differentiable w.r.t. both inputs.
    """
    if isinstance(flow, PixelFlow):
        flow_t, valid_in = flow.flow, flow.valid
    else:
        flow_t, valid_in = flow, None
    S = value_of(source)
    if S.ndim == 2:
        S = S[:, :, None]
    F = value_of(flow_t)
    hs, ws, _ = S.shape
    u, v = F[..., 0], F[..., 1]
    side_u, uc, x0 = _axis_setup(u, ws)
    side_v, vc, y0 = _axis_setup(v, hs)
    x1 = np.minimum(x0 + 1, ws - 1)
    y1 = np.minimum(y0 + 1, hs - 1)
    wx = (uc - x0)[..., None]
    wy = (vc - y0)[..., None]
    s00, s01 = S[y0, x0], S[y0, x1]
    s10, s11 = S[y1, x0], S[y1, x1]
    top = s00 + wx * (s01 - s00)
    bottom = s10 + wx * (s11 - s10)
    out = top + wy * (bottom - top)

    def vjp_flow(g):
        du = np.sum(g * ((1.0 - wy) * (s01 - s00) + wy * (s11 - s10)), axis=-1)
        dv = np.sum(g * (bottom - top), axis=-1)
        du = np.where(side_u == 0, du, 0.0)
        dv = np.where(side_v == 0, dv, 0.0)
        return np.stack([du, dv], axis=-1)

    def vjp_source(g):
        gs = np.zeros_like(S)
        for yy, xx, wgt in (
            (y0, x0, (1 - wx) * (1 - wy)),
            (y0, x1, wx * (1 - wy)),
            (y1, x0, (1 - wx) * wy),
            (y1, x1, wx * wy),
        ):
            np.add.at(gs, (yy, xx), g * wgt)
        return gs.reshape(value_of(source).shape)

    result = ad._node(out, [(flow_t, vjp_flow), (source, vjp_source)])
    valid = (side_u == 0) & (side_v == 0)
    if valid_in is not None:
        valid = valid & valid_in
    return result, valid


def inverse_warp(source_image, depth, pose, K: Intrinsics, rays: np.ndarray | None = None):
    """Reconstruct the target view by sampling ``source_image`` through ``depth`` and ``pose``."""
    return bilinear_sample(source_image, project(depth, pose, K, rays=rays))
