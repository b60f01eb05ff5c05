"""Pinhole cameras, the voxel grid, and the per-camera parameter vector.

Scene coordinates are metric with the voxel grid centred on the origin. A voxel
index ``(d, h, w)`` maps to ``s * (index - dims/2)`` (corner anchored, so the grid
spans ``[-s*X/2, s*(X/2 - 1)]`` along x).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from mvcount.errors import DomainError, ShapeError

DEPTH_EPS = 1e-3
ROTATION_TOL = 1e-9


def identity_augment() -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def _frozen(arr, shape, what) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} has non-finite entries")
    arr.setflags(write=False)
    return arr


def check_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> None:
    if np.max(np.abs(r @ r.T - np.eye(3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise DomainError("extrinsic rotation block is not a proper rotation")


@dataclass(frozen=True)
class CameraRig:
    """Calibrated view: intrinsics ``K``, scene-to-camera ``M``, augmentations, image size."""

    K: np.ndarray
    M: np.ndarray
    image_size: Tuple[int, int]  # (H, W) pixels
    a_c: np.ndarray = field(default_factory=identity_augment)
    a_v: np.ndarray = field(default_factory=identity_augment)

    def __post_init__(self):
        k = _frozen(self.K, (3, 3), "K")
        m = _frozen(self.M, (3, 4), "M")
        if k[2, 2] != 1.0 or k[0, 0] <= 0 or k[1, 1] <= 0 or k[2, 0] != 0 or k[2, 1] != 0:
            raise DomainError("K must have positive focal lengths and last row (0, 0, 1)")
        check_rotation(m[:, :3])
        h, w = (int(v) for v in self.image_size)
        if h <= 0 or w <= 0:
            raise DomainError("image size must be positive")
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "image_size", (h, w))
        object.__setattr__(self, "a_c", _frozen(self.a_c, (2, 3), "A_c"))
        object.__setattr__(self, "a_v", _frozen(self.a_v, (2, 3), "A_v"))

    @property
    def R(self) -> np.ndarray:
        return self.M[:, :3]

    @property
    def t(self) -> np.ndarray:
        return self.M[:, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in scene coordinates."""
        return -self.R.T @ self.t

    @property
    def projection(self) -> np.ndarray:
        return self.K @ self.M

    def with_image_size(self, h: int, w: int) -> "CameraRig":
        return replace(self, image_size=(h, w))

    def __eq__(self, other):
        if not isinstance(other, CameraRig):
            return NotImplemented
        return (self.image_size == other.image_size and np.array_equal(self.K, other.K)
                and np.array_equal(self.M, other.M) and np.array_equal(self.a_c, other.a_c)
                and np.array_equal(self.a_v, other.a_v))

    __hash__ = None


@dataclass(frozen=True)
class VoxelGrid:
    """A ``Z x Y x X`` lattice of cubes with edge ``voxel_size`` metres, centred on the origin."""

    shape: Tuple[int, int, int]
    voxel_size: float
    center_offset: float = 0.0  # 0.5 samples voxel centres instead of corners

    def __post_init__(self):
        shape = tuple(int(v) for v in self.shape)
        if len(shape) != 3 or min(shape) <= 0:
            raise DomainError(f"grid shape must be three positive ints, got {self.shape}")
        if not self.voxel_size > 0:
            raise DomainError("voxel size must be positive")
        object.__setattr__(self, "shape", shape)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.shape))

    def coarsen(self, factor: int = 2) -> "VoxelGrid":
        if any(n % factor for n in self.shape):
            raise ShapeError(f"grid {self.shape} not divisible by {factor}")
        return VoxelGrid(tuple(n // factor for n in self.shape), self.voxel_size * factor, self.center_offset)

    def world_points(self) -> np.ndarray:
        """Scene coordinates of every voxel, shape (Z, Y, X, 3) ordered (x, y, z)."""
        z, y, x = self.shape
        s, c = self.voxel_size, self.center_offset
        d, h, w = np.meshgrid(np.arange(z), np.arange(y), np.arange(x), indexing="ij")
        return np.stack([s * (w + c - x / 2), s * (h + c - y / 2), s * (d + c - z / 2)], axis=-1)

    def continuous_index(self, xyz) -> np.ndarray:
        """Inverse of :func:`voxel_to_world` for arbitrary points; returns (..., 3) as (d, h, w)."""
        xyz = np.asarray(xyz, dtype=float)
        z, y, x = self.shape
        s, c = self.voxel_size, self.center_offset
        return np.stack([xyz[..., 2] / s + z / 2 - c, xyz[..., 1] / s + y / 2 - c, xyz[..., 0] / s + x / 2 - c], axis=-1)

    def contains(self, xyz) -> np.ndarray:
        """True where a point lies within the span of voxel sample positions."""
        idx = self.continuous_index(xyz)
        upper = np.array(self.shape) - 1
        return np.all((idx >= 0) & (idx <= upper), axis=-1)

    def covers(self, xyz) -> np.ndarray:
        """True where a point lies within the cells around the sample positions (half a voxel of slack)."""
        idx = self.continuous_index(xyz)
        upper = np.array(self.shape) - 0.5
        return np.all((idx >= -0.5) & (idx <= upper), axis=-1)

    def voxel_of(self, xyz) -> tuple:
        """Index of the voxel whose cell ``[p, p+1)`` contains the point."""
        idx = np.floor(self.continuous_index(xyz)).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise DomainError(f"point {xyz} lies outside the grid")
        return tuple(int(i) for i in idx)


def voxel_to_world(p, grid: VoxelGrid) -> tuple:
    """Scene coordinates (x, y, z) of voxel ``p = (d, h, w)``."""
    d, h, w = p
    z, y, x = grid.shape
    if not (0 <= d < z and 0 <= h < y and 0 <= w < x):
        raise DomainError(f"voxel {p} outside grid {grid.shape}")
    s, c = grid.voxel_size, grid.center_offset
    return (s * (w + c - x / 2), s * (h + c - y / 2), s * (d + c - z / 2))


def project_points(rig: CameraRig, xyz, eps_depth: float = DEPTH_EPS):
    """Vectorised projection. Returns ``(uv, depth, in_front)`` for points of shape (..., 3).

    ``uv`` is the pixel position after homogeneous division and the image-level
    augmentation ``A_c``; it is NaN where the point is not in front of the camera.
    """
    xyz = np.asarray(xyz, dtype=float)
    cam = xyz @ rig.R.T + rig.t
    depth = cam[..., 2]
    in_front = depth > eps_depth
    pix = cam @ rig.K.T
    safe = np.where(in_front, pix[..., 2], 1.0)
    uv = pix[..., :2] / safe[..., None]
    uv = uv @ rig.a_c[:, :2].T + rig.a_c[:, 2]
    uv = np.where(in_front[..., None], uv, np.nan)
    return uv, depth, in_front


def project_point(rig: CameraRig, xyz, eps_depth: float = DEPTH_EPS) -> Optional[tuple]:
    """``(u, v, z_cam)`` for a point in front of the camera, ``None`` when behind it."""
    uv, depth, in_front = project_points(rig, np.asarray(xyz, dtype=float).reshape(3), eps_depth)
    if not in_front:
        return None
    return float(uv[0]), float(uv[1]), float(depth)


def in_frame(rig: CameraRig, uv: np.ndarray) -> np.ndarray:
    h, w = rig.image_size
    with np.errstate(invalid="ignore"):
        return (uv[..., 0] >= 0) & (uv[..., 0] <= w - 1) & (uv[..., 1] >= 0) & (uv[..., 1] <= h - 1)


def hit_mask(rig: CameraRig, xyz, eps_depth: float = DEPTH_EPS) -> np.ndarray:
    """Vectorised :func:`voxel_hits_view`."""
    uv, _, in_front = project_points(rig, xyz, eps_depth)
    return in_front & in_frame(rig, uv)


def voxel_hits_view(rig: CameraRig, xyz, eps_depth: float = DEPTH_EPS) -> bool:
    """True iff the point is in front of the camera and lands inside the image."""
    return bool(hit_mask(rig, np.asarray(xyz, dtype=float).reshape(3), eps_depth))


def camera_vector(rig: CameraRig, mode: str = "image") -> np.ndarray:
    """Row-major ``M`` (12), ``K`` (9), then ``A_c`` or ``A_v`` (6): 27 values."""
    if mode == "image":
        aug = rig.a_c
    elif mode == "volume":
        aug = rig.a_v
    else:
        raise ValueError(f"mode must be 'image' or 'volume', got {mode!r}")
    return np.concatenate([rig.M.reshape(-1), rig.K.reshape(-1), aug.reshape(-1)])


def positional_encoding_image(h: int, w: int) -> np.ndarray:
    """(2, H, W) map with channel 0 = u/W and channel 1 = v/H."""
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([u / w, v / h]).astype(float)


def positional_encoding_volume(z: int, y: int, x: int) -> np.ndarray:
    """(3, Z, Y, X) map of normalized voxel indices (d/Z, h/Y, w/X)."""
    d, h, w = np.meshgrid(np.arange(z), np.arange(y), np.arange(x), indexing="ij")
    return np.stack([d / z, h / y, w / x]).astype(float)


def volume_to_scene(rig: CameraRig, xyz: np.ndarray) -> np.ndarray:
    """Undo the volume-plane augmentation ``A_v`` (acting on x, y) for volume points."""
    a = rig.a_v
    if np.array_equal(a, identity_augment()):
        return xyz
    lin, off = a[:, :2], a[:, 2]
    plane = (xyz[..., :2] - off) @ np.linalg.inv(lin).T
    return np.concatenate([plane, xyz[..., 2:]], axis=-1)


def scene_to_volume(rig: CameraRig, xyz: np.ndarray) -> np.ndarray:
    a = rig.a_v
    plane = np.asarray(xyz)[..., :2] @ a[:, :2].T + a[:, 2]
    return np.concatenate([plane, np.asarray(xyz)[..., 2:]], axis=-1)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Extrinsic ``M`` for a camera at ``center`` looking at ``target`` (x right, y down, z forward)."""
    center, target, up = (np.asarray(v, dtype=float) for v in (center, target, up))
    forward = target - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise DomainError("look_at: view direction parallel to up vector")
    right /= norm
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    return np.concatenate([r, (-r @ center)[:, None]], axis=1)


def intrinsics(focal: float, cx: float, cy: float, fy: Optional[float] = None) -> np.ndarray:
    return np.array([[focal, 0.0, cx], [0.0, fy if fy is not None else focal, cy], [0.0, 0.0, 1.0]])
