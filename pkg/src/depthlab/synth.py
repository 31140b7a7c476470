"""Procedural textured-plane scenes with exact depth and camera poses.

Scenes are lists of planes with smooth sinusoidal textures.  Rendering
intersects every pixel ray with every plane analytically, so ground-truth
depth is exact and frames of a triplet are photometrically consistent
(Lambertian, view-independent colour).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, PoseParams, axis_angle_to_matrix, relative_pose
from .imaging import read_pfm, read_ppm, write_pfm, write_ppm

PRESETS = ("corridor", "ground_and_walls", "boxes")
D_MIN, D_MAX = 0.1, 100.0
SUPERSAMPLE = 4
# texture reference distance (scene units) for planes seen at grazing angles
GRAZING_SCALE = 8.0
# std (pixels) of the Gaussian pixel prefilter applied analytically to each texture sinusoid
PREFILTER_SIGMA = 1.0


@dataclass
class Texture:
    base: np.ndarray  # (3,)
    ramp: np.ndarray  # (2, 3) colour change per texture unit along s and t
    freqs: np.ndarray  # (k, 2) cycles per texture unit
    phases: np.ndarray  # (k,)
    amps: np.ndarray  # (k, 3)

    def __call__(self, s: np.ndarray, t: np.ndarray, jac: np.ndarray | None = None) -> np.ndarray:
        """Colour at texture coordinates ``(s, t)``.

        ``jac`` (``(..., 2, 2)``: d(s, t)/d(x, y) per pixel) enables the analytic
        prefilter: each sinusoid is attenuated by the Gaussian pixel filter's
        response at its screen-space frequency, so grazing views stay band-limited.
        """
        col = self.base + s[..., None] * self.ramp[0] + t[..., None] * self.ramp[1]
        for f, ph, a in zip(self.freqs, self.phases, self.amps):
            wave = np.cos(2 * np.pi * (f[0] * s + f[1] * t) + ph)
            if jac is not None:
                kx = f[0] * jac[..., 0, 0] + f[1] * jac[..., 1, 0]
                ky = f[0] * jac[..., 0, 1] + f[1] * jac[..., 1, 1]
                wave = wave * np.exp(-2.0 * (np.pi * PREFILTER_SIGMA) ** 2 * (kx * kx + ky * ky))
            col = col + a * wave[..., None]
        return np.clip(col, 0.02, 0.98)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("base", "ramp", "freqs", "phases", "amps")}


@dataclass
class Plane:
    """Points X with ``normal . X = offset``; texture coords along ``axis_s``/``axis_t``."""

    name: str
    normal: np.ndarray
    offset: float
    origin: np.ndarray
    axis_s: np.ndarray
    axis_t: np.ndarray
    texture: Texture
    half_extent: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "normal": self.normal.tolist(),
            "offset": self.offset,
            "origin": self.origin.tolist(),
            "axis_s": self.axis_s.tolist(),
            "axis_t": self.axis_t.tolist(),
            "half_extent": None if self.half_extent is None else list(self.half_extent),
            "texture": self.texture.to_dict(),
        }


@dataclass
class PlaneScene:
    preset: str
    seed: int
    planes: list[Plane] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"preset": self.preset, "seed": self.seed, "planes": [p.to_dict() for p in self.planes]}


@dataclass
class CameraTrajectory:
    world_poses: list[PoseParams]  # t-1, t, t+1 (camera -> world)
    K: Intrinsics


@dataclass
class TripletRecord:
    """One (t-1, t, t+1) window; sources are ordered (t-1, t+1)."""

    frames: list[np.ndarray]
    depths: list[np.ndarray]
    world_poses: list[PoseParams]
    K: Intrinsics

    @property
    def target(self) -> np.ndarray:
        return self.frames[1]

    @property
    def sources(self) -> list[np.ndarray]:
        return [self.frames[0], self.frames[2]]

    @property
    def target_depth(self) -> np.ndarray:
        return self.depths[1]

    @property
    def relative_poses(self) -> list[PoseParams]:
        """Target-to-source poses for (t-1, t+1)."""
        tgt = self.world_poses[1]
        return [relative_pose(tgt, self.world_poses[0]), relative_pose(tgt, self.world_poses[2])]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[1].shape[:2]


# -- scene construction ------------------------------------------------------


def default_intrinsics(height: int, width: int) -> Intrinsics:
    f = float(width)
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


def _texture(rng: np.random.Generator, scale: float) -> Texture:
    """Band-limited texture; ``scale`` is the plane's typical world size of a pixel."""
    k = int(rng.integers(6, 11))
    # dominant content stays near 0.015-0.06 cycles/pixel at typical viewing distance
    cyc_per_px = rng.uniform(0.015, 0.06, size=k)
    angles = rng.uniform(0, np.pi, size=k)
    mags = cyc_per_px / scale
    freqs = np.stack([mags * np.cos(angles), mags * np.sin(angles)], axis=1)
    amps = rng.uniform(0.03, 0.07, size=(k, 1)) * rng.uniform(0.6, 1.0, size=(k, 3))
    return Texture(
        base=rng.uniform(0.3, 0.7, size=3),
        ramp=rng.uniform(-0.02, 0.02, size=(2, 3)),
        freqs=freqs,
        phases=rng.uniform(0, 2 * np.pi, size=k),
        amps=amps,
    )


def _axis_plane(name, axis: int, value: float, rng, scale, half_extent=None, center=None) -> Plane:
    normal = np.zeros(3)
    normal[axis] = 1.0
    others = [i for i in range(3) if i != axis]
    e_s, e_t = np.zeros(3), np.zeros(3)
    e_s[others[0]] = 1.0
    e_t[others[1]] = 1.0
    origin = np.zeros(3) if center is None else np.asarray(center, dtype=float).copy()
    origin[axis] = value
    return Plane(name, normal, float(value), origin, e_s, e_t, _texture(rng, scale), half_extent)


def build_scene(preset: str, seed: int) -> PlaneScene:
    """Deterministic scene for ``preset``; camera sits near the origin looking down +z."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    rng = np.random.default_rng([seed, PRESETS.index(preset)])
    # world size of a pixel at unit depth for the default focal length (f = W)
    px = 1.0 / 96.0
    planes: list[Plane] = []
    if preset == "ground_and_walls":
        ground = rng.uniform(0.9, 1.1)
        left, right = -rng.uniform(1.8, 2.4), rng.uniform(1.8, 2.4)
        back = rng.uniform(8.0, 10.0)
        planes.append(_axis_plane("ground", 1, ground, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("left_wall", 0, left, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("right_wall", 0, right, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("back_wall", 2, back, rng, px * back))
    elif preset == "corridor":
        floor, ceiling = rng.uniform(0.9, 1.1), -rng.uniform(1.0, 1.3)
        half = rng.uniform(1.3, 1.7)
        back = rng.uniform(11.0, 14.0)
        planes.append(_axis_plane("floor", 1, floor, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("ceiling", 1, ceiling, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("left_wall", 0, -half, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("right_wall", 0, half, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("back_wall", 2, back, rng, px * back))
    else:  # boxes
        ground = rng.uniform(0.9, 1.1)
        back = rng.uniform(9.0, 11.0)
        planes.append(_axis_plane("ground", 1, ground, rng, px * GRAZING_SCALE))
        planes.append(_axis_plane("back_wall", 2, back, rng, px * back))
        for i in range(int(rng.integers(2, 4))):
            cx = rng.uniform(-1.8, 1.8)
            cz = rng.uniform(3.5, 7.0)
            hw, hh = rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.7)
            cy = ground - hh
            planes.append(
                _axis_plane(f"box{i}_front", 2, cz - hw, rng, px * cz, (hw, hh), center=(cx, cy, 0.0))
            )
            for sign, tag in ((-1, "left"), (1, "right")):
                planes.append(
                    _axis_plane(
                        f"box{i}_{tag}", 0, cx + sign * hw, rng, px * cz, (hh, hw), center=(0.0, cy, cz)
                    )
                )
    return PlaneScene(preset, int(seed), planes)


# -- rendering ---------------------------------------------------------------


def _intersect(scene: PlaneScene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit distance along ``dirs`` (unit camera-z) and plane index per ray."""
    best = np.full(dirs.shape[:-1], np.inf)
    best_idx = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    for i, p in enumerate(scene.planes):
        denom = dirs @ p.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (p.offset - p.normal @ origin) / denom
        ok = np.isfinite(s) & (s > 1e-9)
        if p.half_extent is not None:
            hit = origin + s[..., None] * dirs
            rel = hit - p.origin
            ok &= np.abs(rel @ p.axis_s) <= p.half_extent[0]
            ok &= np.abs(rel @ p.axis_t) <= p.half_extent[1]
        closer = ok & (s < best)
        best = np.where(closer, s, best)
        best_idx = np.where(closer, i, best_idx)
    return best, best_idx


def _plane_coords(p: Plane, origin, dirs):
    """Texture coordinates where ``dirs`` meet the (unbounded) plane ``p``."""
    s = (p.offset - p.normal @ origin) / (dirs @ p.normal)
    rel = origin + s[..., None] * dirs - p.origin
    return np.stack([rel @ p.axis_s, rel @ p.axis_t], axis=-1)


def _shade(scene: PlaneScene, origin, dirs, dist, idx, step_x=None, step_y=None) -> np.ndarray:
    """Shade hits; ``step_x``/``step_y`` (world ray change per pixel) enable prefiltering."""
    out = np.zeros(dirs.shape[:-1] + (3,))
    hit = origin + dist[..., None] * dirs
    for i, p in enumerate(scene.planes):
        sel = idx == i
        if not np.any(sel):
            continue
        rel = hit[sel] - p.origin
        st = np.stack([rel @ p.axis_s, rel @ p.axis_t], axis=-1)
        jac = None
        if step_x is not None:
            d = dirs[sel]
            # central differences of the plane's texture coordinates along neighbouring rays
            jx = (_plane_coords(p, origin, d + 0.5 * step_x) - _plane_coords(p, origin, d - 0.5 * step_x))
            jy = (_plane_coords(p, origin, d + 0.5 * step_y) - _plane_coords(p, origin, d - 0.5 * step_y))
            jac = np.stack([jx, jy], axis=-1)
        out[sel] = p.texture(st[:, 0], st[:, 1], jac)
    return out


def render_frame(scene: PlaneScene, pose: PoseParams, K: Intrinsics, height: int, width: int):
    """Render colour and z-depth for a camera with camera-to-world ``pose``.

    Depth comes from the pixel-centre ray; colour is averaged over a
    regular sub-pixel grid.
    """
    R = axis_angle_to_matrix(pose.rotation)
    C = pose.translation
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    rays = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    dist, idx = _intersect(scene, C, rays @ R.T)
    if np.any(idx < 0):
        raise RuntimeError("camera ray escapes every plane; scene invariant violated")
    depth = dist  # rays have unit camera-z, so distance along them is z-depth
    if np.any(depth < D_MIN) or np.any(depth > D_MAX):
        raise RuntimeError("rendered depth leaves the supported range")

    n = SUPERSAMPLE
    offs = (np.arange(n) + 0.5) / n - 0.5
    colour = np.zeros((height, width, 3))
    for oy in offs:
        for ox in offs:
            sub = np.stack(
                [(xs + ox - K.cx) / K.fx, (ys + oy - K.cy) / K.fy, np.ones_like(xs)], axis=-1
            ) @ R.T
            d, i = _intersect(scene, C, sub)
            if np.any(i < 0):
                raise RuntimeError("camera ray escapes every plane; scene invariant violated")
            colour += _shade(scene, C, sub, d, i, R[:, 0] / K.fx, R[:, 1] / K.fy)
    return colour / (n * n), depth


def sample_trajectory(seed: int, K: Intrinsics, index: int = 0) -> CameraTrajectory:
    """Three camera poses with lateral + forward motion and small rotations."""
    rng = np.random.default_rng([seed, 7919, index])
    centre = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1), rng.uniform(0.0, 0.5)])
    r_mid = rng.uniform(-1.0, 1.0, size=3) * np.deg2rad(1.5)
    side = rng.choice([-1.0, 1.0])
    step = np.array([side * rng.uniform(0.06, 0.14), rng.uniform(-0.02, 0.02), rng.uniform(0.03, 0.1)])
    poses = []
    for k in (-1, 0, 1):
        jitter = rng.normal(0, 0.01, size=3) if k else np.zeros(3)
        rot = r_mid + (rng.uniform(-1.0, 1.0, size=3) * np.deg2rad(0.3) if k else 0.0)
        poses.append(PoseParams(rot, centre + k * step + jitter))
    return CameraTrajectory(poses, K)


def make_triplet(scene: PlaneScene, trajectory: CameraTrajectory, height: int, width: int) -> TripletRecord:
    frames, depths = [], []
    for pose in trajectory.world_poses:
        img, depth = render_frame(scene, pose, trajectory.K, height, width)
        frames.append(img)
        depths.append(depth)
    return TripletRecord(frames, depths, list(trajectory.world_poses), trajectory.K)


def generate_dataset(preset: str, seed: int, count: int, height: int, width: int) -> list[TripletRecord]:
    scene = build_scene(preset, seed)
    K = default_intrinsics(height, width)
    return [make_triplet(scene, sample_trajectory(seed, K, i), height, width) for i in range(count)]


# -- dataset directory -------------------------------------------------------

MANIFEST = "scene.json"


def write_dataset(records: list[TripletRecord], out_dir, preset: str, seed: int) -> dict:
    """Write frames as PPM, depths as PFM and ``scene.json``; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    if not records:
        raise ValueError("no triplets to write")
    h, w = records[0].shape
    manifest = {
        "preset": preset,
        "seed": int(seed),
        "height": int(h),
        "width": int(w),
        "intrinsics": records[0].K.to_dict(),
        "triplets": [],
    }
    for i, rec in enumerate(records):
        entry = {"index": i, "frames": [], "depths": [], "world_poses": []}
        for j in range(3):
            k = 3 * i + j
            fname, dname = f"frame_{k}.ppm", f"depth_{k}.pfm"
            write_ppm(rec.frames[j], os.path.join(out_dir, fname))
            write_pfm(rec.depths[j], os.path.join(out_dir, dname))
            entry["frames"].append(fname)
            entry["depths"].append(dname)
            entry["world_poses"].append(rec.world_poses[j].to_dict())
        rel = rec.relative_poses
        entry["relative_poses"] = {"prev": rel[0].to_dict(), "next": rel[1].to_dict()}
        manifest["triplets"].append(entry)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(dataset_dir) -> dict:
    path = os.path.join(dataset_dir, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {MANIFEST} in {dataset_dir}")
    with open(path) as fh:
        return json.load(fh)


def read_dataset(dataset_dir) -> list[TripletRecord]:
    manifest = read_manifest(dataset_dir)
    K = Intrinsics.from_dict(manifest["intrinsics"])
    records = []
    for entry in manifest["triplets"]:
        frames = [read_ppm(os.path.join(dataset_dir, f)) for f in entry["frames"]]
        depths = [read_pfm(os.path.join(dataset_dir, d)) for d in entry["depths"]]
        poses = [PoseParams.from_dict(p) for p in entry["world_poses"]]
        records.append(TripletRecord(frames, depths, poses, K))
    return records
