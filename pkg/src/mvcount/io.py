"""On-disk formats: calibration text, raw tensor dumps, datasets and checkpoints.

Floats in text files are written with ``repr`` (shortest round-trip form), so
every reader recovers bit-identical values.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mvcount.errors import ConfigError, ShapeError
from mvcount.geometry import CameraRig

CALIBRATION_FIELDS = "K(9) M(12) H W A_c(6) A_v(6)"


# -- calibration ---------------------------------------------------------------------------------

def format_rig(rig: CameraRig) -> str:
    values = list(rig.K.ravel()) + list(rig.M.ravel())
    tail = list(rig.a_c.ravel()) + list(rig.a_v.ravel())
    h, w = rig.image_size
    return " ".join([repr(float(v)) for v in values] + [str(h), str(w)] + [repr(float(v)) for v in tail])


def parse_rig(line: str) -> CameraRig:
    parts = line.split()
    if len(parts) != 35:
        raise ShapeError(f"calibration record needs 35 fields ({CALIBRATION_FIELDS}), got {len(parts)}")
    nums = [float(p) for p in parts[:21]]
    h, w = int(parts[21]), int(parts[22])
    tail = [float(p) for p in parts[23:]]
    return CameraRig(np.reshape(nums[:9], (3, 3)), np.reshape(nums[9:21], (3, 4)), (h, w),
                     np.reshape(tail[:6], (2, 3)), np.reshape(tail[6:], (2, 3)))


def write_calibration(path, rigs: Sequence[CameraRig]) -> None:
    lines = [f"# {CALIBRATION_FIELDS}"] + [format_rig(r) for r in rigs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path) -> List[CameraRig]:
    rigs = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rigs.append(parse_rig(line))
    return rigs


# -- raw tensor dumps ----------------------------------------------------------------------------

def write_tensor(path, array: np.ndarray, scale: float = 1.0, level: int = 0) -> None:
    """One text header line ``dims=... scale=s level=l`` followed by little-endian float64 data."""
    array = np.asarray(array, dtype="<f8")
    dims = ",".join(str(d) for d in array.shape)
    header = f"dims={dims} scale={scale!r} level={int(level)}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array).tobytes())


def read_tensor(path) -> Tuple[np.ndarray, Dict[str, object]]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        payload = fh.read()
    meta = dict(item.split("=", 1) for item in header)
    dims = tuple(int(d) for d in meta["dims"].split(","))
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise ShapeError(f"{path}: header dims {dims} do not match {data.size} values")
    return data.reshape(dims).astype(np.float64), {"dims": dims, "scale": float(meta["scale"]), "level": int(meta["level"])}


def write_density(path, density: np.ndarray, scale: float, level: int) -> None:
    """Density volumes are stored without their leading channel axis, as ``Z, Y, X``."""
    density = np.asarray(density)
    write_tensor(path, density[0] if density.ndim == 4 else density, scale, level)


def read_density(path) -> Tuple[np.ndarray, Dict[str, object]]:
    data, meta = read_tensor(path)
    return data[None], meta


# -- datasets -------------------------------------------------------------------------------------

@dataclass
class SceneRecord:
    images: List[np.ndarray]  # [3, H, W] per view
    rigs: List[CameraRig]
    heads: np.ndarray  # (n, 3)
    gt_2d: List[np.ndarray]  # [1, h, w] per view
    gt_3d: List[np.ndarray]  # [1, Z, Y, X] per level, finest first
    voxel_sizes: List[float]
    stride: int = 4
    meta: Optional[dict] = None


def export_scene(directory, record: SceneRecord) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(record.images):
        write_tensor(d / f"view_{i}.raw", img)
    for i, g in enumerate(record.gt_2d):
        write_tensor(d / f"gt2d_view_{i}.raw", np.asarray(g)[0], scale=float(record.stride))
    for level, (g, s) in enumerate(zip(record.gt_3d, record.voxel_sizes)):
        write_density(d / f"gt3d_level_{level}.raw", g, s, level)
    write_calibration(d / "calibration.txt", record.rigs)
    with open(d / "heads.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z"])
        for p in np.asarray(record.heads).reshape(-1, 3):
            writer.writerow([repr(float(v)) for v in p])
    (d / "scene.json").write_text(json.dumps(record.meta or {}, sort_keys=True))


def load_scene(directory) -> SceneRecord:
    d = Path(directory)
    rigs = read_calibration(d / "calibration.txt")
    images = [read_tensor(d / f"view_{i}.raw")[0] for i in range(len(rigs))]
    gt_2d, stride = [], 4
    for i in range(len(rigs)):
        data, meta = read_tensor(d / f"gt2d_view_{i}.raw")
        gt_2d.append(data[None])
        stride = int(meta["scale"])
    gt_3d, sizes = [], []
    level = 0
    while (d / f"gt3d_level_{level}.raw").exists():
        data, meta = read_density(d / f"gt3d_level_{level}.raw")
        gt_3d.append(data)
        sizes.append(meta["scale"])
        level += 1
    with open(d / "heads.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    heads = np.array([[float(v) for v in r] for r in rows]).reshape(-1, 3)
    meta = json.loads((d / "scene.json").read_text()) if (d / "scene.json").exists() else None
    return SceneRecord(images, rigs, heads, gt_2d, gt_3d, sizes, stride, meta)


def export_dataset(root, records: Sequence[SceneRecord]) -> List[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, rec in enumerate(records):
        paths.append(root / f"scene_{k:04d}")
        export_scene(paths[-1], rec)
    return paths


def load_dataset(root) -> List[SceneRecord]:
    return [load_scene(p) for p in sorted(Path(root).glob("scene_*")) if p.is_dir()]


# -- checkpoints ----------------------------------------------------------------------------------

def save_checkpoint(path, state: Dict[str, np.ndarray], config_text: str, config_hash: str) -> None:
    arrays = {f"p:{k}": v for k, v in state.items()}
    arrays["config"] = np.array(config_text)
    arrays["config_hash"] = np.array(config_hash)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], str, str]:
    try:
        with np.load(path, allow_pickle=False) as data:
            state = {k[2:]: data[k].copy() for k in data.files if k.startswith("p:")}
            return state, str(data["config"]), str(data["config_hash"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
