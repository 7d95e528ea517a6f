"""MVR volume files and PNG/PGM slice export.

An MVR volume is a pair ``name.json`` + ``name.raw``. The JSON header holds
``dims``, ``spacing``, ``origin``, ``dtype`` (``f32`` or ``u8``) and ``axes``;
multi-component volumes add ``components`` and store each component as a full
volume, one after another. The payload is little-endian, x fastest.
Label volumes additionally record ``n_classes``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .appearance import WeightMap
from .geometry import DisplacementField, Grid, LabelVolume, ProbLabelVolume, ScalarVolume

DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
HEADER_KEYS = {"dims", "spacing", "origin", "dtype", "axes", "components", "n_classes", "kind"}


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".raw") else path
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".raw")


def write_array(path, grid: Grid, data: np.ndarray, dtype: str = "f32", kind: str = None,
                n_classes: int = None, overwrite: bool = True):
    """Write ``data`` (shape ``dims`` or ``dims + (c,)``) as an MVR pair."""
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
    hdr_path, raw_path = _paths(path)
    if not overwrite and (hdr_path.exists() or raw_path.exists()):
        raise FileExistsError(f"{hdr_path} exists (pass overwrite to replace it)")
    data = np.asarray(data)
    comps = 1 if data.ndim == grid.ndim else data.shape[-1]
    header = {"dims": list(grid.dims), "spacing": list(grid.spacing), "origin": list(grid.origin),
              "dtype": dtype, "axes": grid.ndim}
    if comps != 1:
        header["components"] = comps
    if kind:
        header["kind"] = kind
    if n_classes is not None:
        header["n_classes"] = int(n_classes)
    if dtype == "u8" and (data.min() < 0 or data.max() > 255):
        raise ValueError("u8 payload out of range")
    chunks = [data] if comps == 1 and data.ndim == grid.ndim else [data[..., c] for c in range(comps)]
    payload = b"".join(np.asarray(c).astype(DTYPES[dtype]).tobytes(order="F") for c in chunks)
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    hdr_path.write_text(json.dumps(header, indent=1) + "\n")
    raw_path.write_bytes(payload)
    return hdr_path


def read_array(path):
    """Return ``(grid, data, header)``; data has a trailing component axis if ``components > 1``."""
    hdr_path, raw_path = _paths(path)
    header = json.loads(hdr_path.read_text())
    unknown = set(header) - HEADER_KEYS
    if unknown:
        raise ValueError(f"{hdr_path}: unknown header keys {sorted(unknown)}")
    if header.get("axes") != len(header["dims"]):
        raise ValueError(f"{hdr_path}: axes does not match dims")
    grid = Grid(header["dims"], header["spacing"], header["origin"])
    comps = int(header.get("components", 1))
    flat = np.frombuffer(raw_path.read_bytes(), dtype=DTYPES[header["dtype"]])
    if flat.size != grid.size * comps:
        raise ValueError(f"{raw_path}: expected {grid.size * comps} values, found {flat.size}")
    parts = [flat[c * grid.size:(c + 1) * grid.size].reshape(grid.dims, order="F") for c in range(comps)]
    data = parts[0] if comps == 1 else np.stack(parts, axis=-1)
    return grid, data.astype(float) if header["dtype"] == "f32" else data.astype(np.int64), header


def save_volume(path, vol, overwrite: bool = True):
    if isinstance(vol, LabelVolume):
        return write_array(path, vol.grid, vol.labels, "u8", "labels", vol.n_classes, overwrite)
    if isinstance(vol, ProbLabelVolume):
        return write_array(path, vol.grid, vol.probs, "f32", "probs", overwrite=overwrite)
    if isinstance(vol, DisplacementField):
        return write_array(path, vol.grid, vol.vectors, "f32", "displacement", overwrite=overwrite)
    if isinstance(vol, WeightMap):
        return write_array(path, vol.grid, vol.weights, "f32", "weights", overwrite=overwrite)
    if isinstance(vol, ScalarVolume):
        return write_array(path, vol.grid, vol.values, "f32", "scalar", overwrite=overwrite)
    raise TypeError(f"cannot save {type(vol).__name__}")


def load_volume(path):
    """Load an MVR pair into the volume type recorded in its header."""
    grid, data, header = read_array(path)
    kind = header.get("kind")
    if kind is None:
        kind = "labels" if header["dtype"] == "u8" else "scalar"
    if kind == "labels":
        return LabelVolume(grid, data, header.get("n_classes"))
    if kind == "probs":
        # f32 storage: renormalize away the rounding
        data = np.clip(data, 0, None)
        return ProbLabelVolume(grid, data / data.sum(axis=-1, keepdims=True))
    if kind == "displacement":
        return DisplacementField(grid, data)
    if kind == "weights":
        return WeightMap(grid, np.clip(data, 0.0, 1.0))
    return ScalarVolume(grid, data)


def slice_image(data: np.ndarray, axis: int = 2, index: int = None) -> np.ndarray:
    """8-bit grayscale slice scaled over the slice's own range (2D data passes through)."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 3:
        index = data.shape[axis] // 2 if index is None else index
        data = np.take(data, index, axis=axis)
    lo, hi = data.min(), data.max()
    scaled = np.zeros_like(data) if hi <= lo else (data - lo) / (hi - lo)
    # rows are the second grid axis so images appear with x to the right
    return np.round(scaled.T * 255).astype(np.uint8)


def write_png(path, data: np.ndarray, axis: int = 2, index: int = None):
    from PIL import Image

    Image.fromarray(slice_image(data, axis, index), mode="L").save(path)


def write_pgm(path, data: np.ndarray, axis: int = 2, index: int = None):
    img = slice_image(data, axis, index)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
