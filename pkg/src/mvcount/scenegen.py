"""Synthetic crowds, camera rigs, rendered views and ground-truth densities.

The scene frame matches the voxel grid: the default grid spans z in
[-1, 0.75] m, so the ground sits at ``GROUND_BASE`` below the origin and heads
of 1.4 to 1.9 m tall people land near z = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from mvcount.errors import DomainError, GenerationError
from mvcount.geometry import (
    CameraRig,
    VoxelGrid,
    hit_mask,
    in_frame,
    intrinsics,
    look_at,
    project_points,
    scene_to_volume,
)
from mvcount.numerics import Tensor, as_tensor, grid_sample

DEFAULT_GRID = VoxelGrid((8, 32, 32), 0.25)
IMAGE_SIZE = (64, 64)
GROUND_BASE = -1.65
PERSON_HEIGHT = (1.4, 1.9)
HEAD_RADIUS = 0.3  # metres, drawn radius of a head-and-shoulders blob
MIN_SEPARATION = 0.3
TERRAINS = ("flat", "inclined", "bumps")

BACKGROUND = np.array([0.45, 0.45, 0.45])
HEAD_COLOR = np.array([0.95, 0.8, 0.2])
BOX_COLOR = np.array([0.15, 0.3, 0.6])


# -- scene --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class Terrain:
    kind: str = "flat"
    base: float = GROUND_BASE
    slope: float = 0.0
    direction: float = 0.0  # radians, uphill heading in the xy plane
    bumps: tuple = ()  # (x, y, amplitude, width) per bump

    def __post_init__(self):
        if self.kind not in TERRAINS:
            raise DomainError(f"terrain must be one of {TERRAINS}, got {self.kind!r}")

    def height(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        z = np.full(np.broadcast(x, y).shape, self.base)
        if self.kind == "inclined":
            z = z + self.slope * (x * np.cos(self.direction) + y * np.sin(self.direction))
        elif self.kind == "bumps":
            for bx, by, amp, width in self.bumps:
                z = z + amp * np.exp(-((x - bx) ** 2 + (y - by) ** 2) / (2 * width**2))
        return z


def make_terrain(kind: str, rng: np.random.Generator, slope: float = 0.12) -> Terrain:
    if kind == "flat":
        return Terrain("flat")
    if kind == "inclined":
        return Terrain("inclined", slope=slope, direction=float(rng.uniform(0, 2 * np.pi)))
    if kind == "bumps":
        bumps = tuple((float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), float(rng.uniform(-0.4, 0.4)),
                       float(rng.uniform(1.0, 2.0))) for _ in range(3))
        return Terrain("bumps", bumps=bumps)
    raise DomainError(f"terrain must be one of {TERRAINS}, got {kind!r}")


@dataclass(frozen=True)
class Box:
    lo: tuple  # (x, y, z) minimum corner
    hi: tuple

    def corners(self) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.array([[(hi if i & 1 else lo)[0], (hi if i & 2 else lo)[1], (hi if i & 4 else lo)[2]] for i in range(8)])

    def contains_xy(self, x, y, margin: float = 0.0) -> np.ndarray:
        return ((x >= self.lo[0] - margin) & (x <= self.hi[0] + margin)
                & (y >= self.lo[1] - margin) & (y <= self.hi[1] + margin))


@dataclass
class Scene:
    heads: np.ndarray  # (n, 3)
    terrain: Terrain = field(default_factory=Terrain)
    occluders: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def count(self) -> int:
        return len(self.heads)


def _place_occluder(rng, grid: VoxelGrid, terrain: Terrain) -> Box:
    (x0, y0, _), (x1, y1, _) = _grid_bounds(grid)
    w, d = rng.uniform(0.6, 1.2, size=2)
    cx, cy = rng.uniform(x0 + 1.0, x1 - 1.0), rng.uniform(y0 + 1.0, y1 - 1.0)
    xs = np.array([cx - w / 2, cx + w / 2])
    ys = np.array([cy - d / 2, cy + d / 2])
    ground = terrain.height(*np.meshgrid(xs, ys))
    top = float(ground.max() + rng.uniform(2.2, 2.8))
    return Box((xs[0], ys[0], float(ground.min()) - 0.1), (xs[1], ys[1], top))


def _grid_bounds(grid: VoxelGrid) -> tuple:
    z, y, x = grid.shape
    s, c = grid.voxel_size, grid.center_offset
    lo = np.array([s * (c - x / 2), s * (c - y / 2), s * (c - z / 2)])
    hi = lo + s * (np.array([x, y, z]) - 1)
    return lo, hi


def generate_scene(seed: int, n_people: int, terrain: Union[str, Terrain] = "flat", grid: VoxelGrid = DEFAULT_GRID,
                   occluders: int = 0, congested: bool = False, max_attempts: int = 20000) -> Scene:
    """Rejection-sample heads inside ``grid``; deterministic in ``seed``.

    ``congested`` packs everyone into a square sub-region at two or more people
    per square metre.
    """
    if n_people < 0:
        raise DomainError("n_people must be non-negative")
    rng = np.random.default_rng(seed)
    terrain = terrain if isinstance(terrain, Terrain) else make_terrain(terrain, rng)
    boxes = [_place_occluder(rng, grid, terrain) for _ in range(occluders)]
    lo, hi = _grid_bounds(grid)
    if congested and n_people:
        side = min(np.sqrt(n_people / 2.0), hi[0] - lo[0], hi[1] - lo[1])
        corner = rng.uniform(lo[:2], hi[:2] - side)
        xy_lo, xy_hi = corner, corner + side
    else:
        xy_lo, xy_hi = lo[:2], hi[:2]
    heads: List[np.ndarray] = []
    attempts = 0
    while len(heads) < n_people:
        attempts += 1
        if attempts > max_attempts:
            raise GenerationError(f"placed {len(heads)} of {n_people} people after {max_attempts} attempts")
        x, y = rng.uniform(xy_lo, xy_hi)
        z = float(terrain.height(x, y)) + rng.uniform(*PERSON_HEIGHT)
        p = np.array([x, y, z])
        if not grid.contains(p):
            continue
        if any(b.contains_xy(x, y, margin=0.2) for b in boxes):
            continue
        if heads and np.min(np.linalg.norm(np.array(heads)[:, :2] - p[:2], axis=1)) < MIN_SEPARATION:
            continue
        heads.append(p)
    return Scene(np.array(heads).reshape(-1, 3), terrain, boxes, seed)


# -- camera layouts -------------------------------------------------------------------------------

@dataclass(frozen=True)
class LayoutSpec:
    views: Union[int, Tuple[int, int]] = 3  # fixed count or inclusive (a, b) range
    radius: tuple = (10.0, 13.0)
    height: tuple = (6.0, 8.0)
    focal: tuple = (45.0, 60.0)
    jitter: float = 0.5  # look-at target jitter in metres
    image_size: tuple = IMAGE_SIZE
    min_views: int = 2
    max_retries: int = 100

    def sample_count(self, rng: np.random.Generator) -> int:
        if isinstance(self.views, (tuple, list)):
            a, b = self.views
            return int(rng.integers(a, b + 1))
        return int(self.views)


def _coverage_points(grid: VoxelGrid) -> np.ndarray:
    lo, hi = _grid_bounds(grid)
    xs = np.linspace(lo[0], hi[0], 9)
    ys = np.linspace(lo[1], hi[1], 9)
    x, y, z = np.meshgrid(xs, ys, [lo[2], hi[2]], indexing="ij")
    return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def generate_layout(seed: int, spec: LayoutSpec = LayoutSpec(), grid: VoxelGrid = DEFAULT_GRID,
                    scene: Optional[Scene] = None, shuffle: bool = False) -> List[CameraRig]:
    """Cameras ringed around the grid, sorted by azimuth.

    Every head of ``scene`` (or, without a scene, every point of a lattice over
    the grid) must fall inside at least ``min(min_views, N)`` frames.
    """
    rng = np.random.default_rng(seed)
    n = spec.sample_count(rng)
    if n < 1:
        raise DomainError("a layout needs at least one view")
    h, w = spec.image_size
    points = scene.heads if scene is not None and scene.count else _coverage_points(grid)
    need = min(spec.min_views, n)
    for _ in range(spec.max_retries):
        start = rng.uniform(0, 2 * np.pi)
        azimuths = start + 2 * np.pi * np.arange(n) / n + rng.uniform(-0.3, 0.3, size=n) * (np.pi / n)
        rigs = []
        for az in np.sort(np.mod(azimuths, 2 * np.pi)):
            r, z = rng.uniform(*spec.radius), rng.uniform(*spec.height)
            center = (r * np.cos(az), r * np.sin(az), z)
            target = np.append(rng.uniform(-spec.jitter, spec.jitter, size=2), 0.0)
            K = intrinsics(rng.uniform(*spec.focal), (w - 1) / 2, (h - 1) / 2)
            rigs.append(CameraRig(K, look_at(center, target), (h, w)))
        seen = np.sum([hit_mask(r, points) for r in rigs], axis=0)
        if np.all(seen >= need):
            if shuffle:
                rigs = [rigs[i] for i in rng.permutation(n)]
            return rigs
    raise GenerationError(f"no layout with {n} views met the overlap constraint in {spec.max_retries} retries")


def perturb_extrinsics(rig: CameraRig, rot_noise_deg: float, trans_noise_m: float, seed: int) -> CameraRig:
    """Left-compose a random rotation of at most ``rot_noise_deg`` and a shift of at most ``trans_noise_m``."""
    if rot_noise_deg == 0 and trans_noise_m == 0:
        return rig
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rot_noise_deg) * rng.uniform()
    noise = Rotation.from_rotvec(axis * angle).as_matrix()
    direction = rng.normal(size=3)
    shift = direction / np.linalg.norm(direction) * trans_noise_m * rng.uniform()
    R = noise @ rig.R
    R = _orthonormalize(R)
    t = noise @ rig.t + shift
    return CameraRig(rig.K, np.concatenate([R, t[:, None]], axis=1), rig.image_size, rig.a_c, rig.a_v)


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def augment_rig(rig: CameraRig, rng: np.random.Generator, max_shift: float = 4.0, flip: bool = True) -> CameraRig:
    """Random image-plane augmentation: optional horizontal flip plus a pixel shift."""
    w = rig.image_size[1]
    sx = -1.0 if flip and rng.uniform() < 0.5 else 1.0
    du, dv = rng.uniform(-max_shift, max_shift, size=2)
    a_c = np.array([[sx, 0.0, (w - 1) * (1 - sx) / 2 + du], [0.0, 1.0, dv]])
    return CameraRig(rig.K, rig.M, rig.image_size, a_c, rig.a_v)


# -- visibility and rendering ---------------------------------------------------------------------

def _segment_hits_box(origin: np.ndarray, target: np.ndarray, box: Box) -> bool:
    """Slab test for the open segment origin -> target against ``box``."""
    d = target - origin
    t0, t1 = 0.0, 1.0
    for k in range(3):
        lo, hi = box.lo[k], box.hi[k]
        if abs(d[k]) < 1e-15:
            if origin[k] < lo or origin[k] > hi:
                return False
            continue
        a, b = (lo - origin[k]) / d[k], (hi - origin[k]) / d[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
        if t0 > t1:
            return False
    return t1 > 0.0 and t0 < 1.0


def head_visibility(scene: Scene, rig: CameraRig) -> np.ndarray:
    """Boolean per head: in front, inside the frame, and not hidden by any occluder.

    The renderer and the 2-D ground truth both use this predicate.
    """
    if not scene.count:
        return np.zeros(0, dtype=bool)
    visible = hit_mask(rig, scene.heads)
    center = rig.center
    for i in np.flatnonzero(visible):
        if any(_segment_hits_box(center, scene.heads[i], b) for b in scene.occluders):
            visible[i] = False
    return visible


def head_radius_px(focal: float, depth) -> np.ndarray:
    return focal * HEAD_RADIUS / np.asarray(depth, dtype=float)


def _draw_disk(img: np.ndarray, u: float, v: float, radius: float, color: np.ndarray) -> None:
    h, w = img.shape[1:]
    r = radius + 1.0
    x0, x1 = max(int(np.floor(u - r)), 0), min(int(np.ceil(u + r)), w - 1)
    y0, y1 = max(int(np.floor(v - r)), 0), min(int(np.ceil(v + r)), h - 1)
    if x0 > x1 or y0 > y1:
        return
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    dist = np.hypot(xx - u, yy - v)
    cover = np.clip(radius - dist + 0.5, 0.0, 1.0)
    patch = img[:, y0:y1 + 1, x0:x1 + 1]
    img[:, y0:y1 + 1, x0:x1 + 1] = patch * (1 - cover) + color[:, None, None] * cover


def _draw_box(img: np.ndarray, rig: CameraRig, box: Box) -> None:
    uv, _, front = project_points(rig, box.corners())
    if not np.all(front):
        return
    try:
        hull = ConvexHull(uv)
    except Exception:  # degenerate footprint seen edge-on
        return
    h, w = img.shape[1:]
    lo = np.maximum(np.floor(uv.min(axis=0)).astype(int), 0)
    hi = np.minimum(np.ceil(uv.max(axis=0)).astype(int), [w - 1, h - 1])
    if np.any(lo > hi):
        return
    yy, xx = np.mgrid[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
    pts = np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)], axis=1)
    inside = np.all(pts @ hull.equations.T <= 1e-9, axis=1).reshape(xx.shape)
    region = img[:, lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
    region[:, inside] = BOX_COLOR[:, None]


def render_image(scene: Scene, rig: CameraRig, noise_seed: int = 0, noise: float = 0.02) -> np.ndarray:
    """[3, H, W] view: noisy background, opaque boxes and visible heads in painter's order."""
    h, w = rig.image_size
    rng = np.random.default_rng(noise_seed)
    img = np.broadcast_to(BACKGROUND[:, None, None], (3, h, w)) + noise * rng.normal(size=(3, h, w))
    items = []
    for box in scene.occluders:
        _, depth, _ = project_points(rig, (np.asarray(box.lo) + np.asarray(box.hi)) / 2)
        items.append((float(depth), "box", box))
    if scene.count:
        uv, depth, _ = project_points(rig, scene.heads)
        for i in np.flatnonzero(head_visibility(scene, rig)):
            items.append((float(depth[i]), "head", (uv[i], depth[i])))
    for _, kind, item in sorted(items, key=lambda t: -t[0]):
        if kind == "box":
            _draw_box(img, rig, item)
        else:
            (u, v), depth = item
            _draw_disk(img, u, v, float(head_radius_px(rig.K[0, 0], depth)), HEAD_COLOR)
    return img


def render_images(scene: Scene, rigs: Sequence[CameraRig], noise: float = 0.02) -> List[np.ndarray]:
    base = 0 if scene.seed is None else int(scene.seed)
    return [render_image(scene, rig, noise_seed=base * 1009 + i, noise=noise) for i, rig in enumerate(rigs)]


# -- ground-truth densities -------------------------------------------------------------------------

def _splat(out: np.ndarray, center: np.ndarray, sigma: float) -> None:
    """Add a unit-mass Gaussian truncated at 3 sigma and renormalized over the in-bounds window."""
    radius = 3.0 * sigma
    lo = np.maximum(np.ceil(center - radius).astype(int), 0)
    hi = np.minimum(np.floor(center + radius).astype(int), np.array(out.shape) - 1)
    if np.any(lo > hi):
        raise DomainError(f"kernel at {center} falls entirely outside the map")
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    d2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
    k = np.where(d2 <= radius**2, np.exp(-d2 / (2 * sigma**2)), 0.0)
    total = k.sum()
    if total <= 0:
        raise DomainError(f"kernel at {center} has no support inside the map")
    out[tuple(slice(a, b + 1) for a, b in zip(lo, hi))] += k / total


def render_gt_density3d(scene: Scene, grid: VoxelGrid, sigma_vox: float = 1.0,
                        a_v: Optional[np.ndarray] = None) -> np.ndarray:
    """[1, Z, Y, X] density with unit mass per head."""
    g = np.zeros(grid.shape)
    heads = scene.heads
    if a_v is not None and len(heads):
        heads = scene_to_volume(CameraRig(np.eye(3), np.eye(3, 4), (1, 1), a_v=a_v), heads)
    for p in heads:
        if not grid.covers(p):
            raise DomainError(f"head {p} lies outside the grid")
        _splat(g, grid.continuous_index(p), sigma_vox)
    return g[None]


def render_gt_density2d(scene: Scene, rig: CameraRig, sigma_px: float = 2.0, stride: int = 4) -> np.ndarray:
    """[1, H/stride, W/stride] density with unit mass per visible head."""
    h, w = rig.image_size
    out = np.zeros((h // stride, w // stride))
    if scene.count:
        uv, _, _ = project_points(rig, scene.heads)
        for i in np.flatnonzero(head_visibility(scene, rig)):
            _splat(out, uv[i, ::-1] / stride, sigma_px)
    return out[None]


def visible_counts(scene: Scene, rigs: Sequence[CameraRig]) -> List[int]:
    return [int(head_visibility(scene, r).sum()) for r in rigs]


# -- flat-plane baseline --------------------------------------------------------------------------

def ipm_reference_points(grid: VoxelGrid, rig: CameraRig, plane_z: float = 0.0) -> np.ndarray:
    """(Y, X, 2) pixel position of each column's ground-plane point; NaN when not in frame."""
    pts = grid.world_points()[0].copy()
    pts[..., 2] = plane_z
    uv, _, front = project_points(rig, pts)
    ok = front & in_frame(rig, uv)
    return np.where(ok[..., None], uv, np.nan)


def ipm_lift_baseline(feature, rig: CameraRig, grid: VoxelGrid, stride: int = 4, plane_z: float = 0.0,
                      hits: Optional[np.ndarray] = None) -> Tensor:
    """Copy each column's ground-plane feature to every voxel of the column the view hits."""
    feature = as_tensor(feature)
    c = feature.shape[0]
    uv = ipm_reference_points(grid, rig, plane_z)
    valid = np.all(np.isfinite(uv), axis=-1)
    uv = np.where(valid[..., None], uv / stride, -10.0)  # far outside: samples to zero
    sampled = grid_sample(feature, uv[..., 0], uv[..., 1])  # [Y, X, C]
    if hits is None:
        hits = hit_mask(rig, grid.world_points())
    mask = (hits & valid[None]).astype(feature.dtype)  # [Z, Y, X]
    column = sampled.transpose(2, 0, 1).reshape((c, 1) + grid.shape[1:])
    return column * mask[None]
