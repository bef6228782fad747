"""Dataset and image IO: manifest JSON, sRGB PNG, float PFM, CSV.

All in-memory math is linear RGB; the sRGB transfer is applied only at PNG
boundaries.  Depth goes through PFM so ground truth is never quantized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .render import Camera

MANIFEST_NAME = "transforms.json"
META_NAME = "meta.json"


def srgb_encode(linear):
    """Linear [0,1] -> sRGB [0,1] transfer (IEC 61966-2-1)."""
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(linear, 1.0 / 2.4) - 0.055,
    )


def srgb_decode(srgb):
    """sRGB [0,1] -> linear [0,1] transfer."""
    srgb = np.asarray(srgb, dtype=np.float64)
    return np.where(
        srgb <= 0.04045,
        srgb / 12.92,
        np.power((srgb + 0.055) / 1.055, 2.4),
    )


def write_png(path, linear_rgb):
    """8-bit sRGB PNG from a linear (H, W, 3) float image."""
    u8 = np.round(srgb_encode(linear_rgb) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def read_png(path):
    """Linear (H, W, 3) float image from an 8-bit sRGB PNG."""
    with Image.open(path) as img:
        u8 = np.asarray(img.convert("RGB"), dtype=np.float64)
    return srgb_decode(u8 / 255.0)


def write_png_gray(path, values):
    """8-bit grayscale PNG from (H, W) values in [0, 1], linearly quantized."""
    u8 = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def write_pfm(path, values):
    """Grayscale little-endian PFM (scale -1.0) from an (H, W) float array."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects an (H, W) array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].tobytes())  # PFM rows run bottom to top


def read_pfm(path):
    """(H, W) float64 array from a grayscale PFM file."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise ValueError(f"{path}: truncated PFM payload")
    return data.reshape(h, w)[::-1].astype(np.float64)


def format_float(x):
    """Float cell with 6 significant digits."""
    return f"{x:.6g}"


def write_csv(path, header, rows, trailing_comments=()):
    """Write a CSV file: exact header line, one row per record, LF endings.

    Float cells are formatted with 6 significant digits; other cells are
    written via str().  Trailing comment lines are emitted verbatim.
    """
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            cells = [format_float(c) if isinstance(c, float) else str(c) for c in row]
            fh.write(",".join(cells) + "\n")
        for comment in trailing_comments:
            fh.write(comment + "\n")


def read_csv(path, expected_header):
    """Data rows (lists of strings) of a CSV written by :func:`write_csv`.

    Comment lines starting with '#' are returned separately.  A header that
    does not exactly match ``expected_header`` is a parse error.
    """
    with open(path, "r", newline="") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != expected_header:
        found = lines[0] if lines else "<empty file>"
        raise ValueError(f"{path}: header {found!r} does not match {expected_header!r}")
    rows = []
    comments = []
    for line in lines[1:]:
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line)
        else:
            rows.append(line.split(","))
    return rows, comments


def write_json(path, obj):
    """Deterministic JSON (sorted keys, stable float repr)."""
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Dataset:
    """A loaded posed-image dataset.

    ``images`` holds the foggy (training-target) frames as linear RGB; clear
    counterparts and depth maps are present only when the dataset provides
    them.  Frames appear in manifest order.
    """

    cameras: list
    images: np.ndarray
    names: list
    splits: list
    clear: np.ndarray | None = None
    depth: np.ndarray | None = None
    meta: dict | None = None

    @property
    def camera_angle_x(self):
        return self.cameras[0].camera_angle_x

    def frame_indices(self, split):
        return [i for i, s in enumerate(self.splits) if s == split]

    def scene_bounds(self):
        """Field bounds from metadata, or a camera-shell fallback."""
        if self.meta and "fog_bbox_min" in self.meta:
            return (
                np.asarray(self.meta["fog_bbox_min"], dtype=np.float64),
                np.asarray(self.meta["fog_bbox_max"], dtype=np.float64),
            )
        radius = max(float(np.linalg.norm(c.transform[:3, 3])) for c in self.cameras)
        return np.full(3, -radius), np.full(3, radius)


def _default_bounds(position):
    dist = float(np.linalg.norm(position))
    far = 2.0 * max(dist, 1.0)
    return 0.05 * far, far


def load_dataset(directory):
    """Load a dataset directory containing a transforms.json manifest.

    Decodes sRGB PNGs to linear floats and PFM depths when present; missing
    optional collections (clear counterparts, depth) yield absent fields.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    angle = float(manifest["camera_angle_x"])

    meta = None
    meta_path = directory / META_NAME
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    frame_meta = {f["file_path"]: f for f in meta["frames"]} if meta else {}

    cameras = []
    images = []
    clears = []
    depths = []
    names = []
    splits = []
    for frame in manifest["frames"]:
        rel = frame["file_path"]
        mat = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError(f"{rel}: transform_matrix must be 4x4")
        rot = mat[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-4):
            raise ValueError(f"{rel}: rotation block is not orthonormal")
        img = read_png(directory / (rel.lstrip("./") + ".png"))
        fm = frame_meta.get(rel, {})
        near, far = fm.get("near"), fm.get("far")
        if near is None or far is None:
            near, far = _default_bounds(mat[:3, 3])
        cameras.append(
            Camera(
                width=img.shape[1],
                height=img.shape[0],
                camera_angle_x=angle,
                transform=mat,
                near=float(near),
                far=float(far),
            )
        )
        images.append(img)
        names.append(Path(rel).name)
        splits.append(fm.get("split", "train"))
        clear_rel = fm.get("clear_path")
        clear_file = directory / (clear_rel.lstrip("./") + ".png") if clear_rel else None
        clears.append(read_png(clear_file) if clear_file and clear_file.exists() else None)
        depth_rel = fm.get("depth_path")
        depth_file = directory / depth_rel.lstrip("./") if depth_rel else None
        depths.append(read_pfm(depth_file) if depth_file and depth_file.exists() else None)

    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise ValueError(f"frames disagree on resolution: {sorted(shapes)}")

    dataset = Dataset(
        cameras=cameras,
        images=np.stack(images),
        names=names,
        splits=splits,
        meta=meta,
    )
    if all(c is not None for c in clears) and clears:
        dataset.clear = np.stack(clears)
    if all(d is not None for d in depths) and depths:
        dataset.depth = np.stack(depths)
    return dataset
