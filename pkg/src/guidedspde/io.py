"""Binary array dumps, CSV helpers, heatmaps and error metrics."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

DUMP_FORMAT = "float64-le"


def write_dump(path, arrays: dict) -> Path:
    """Write arrays back to back as little-endian float64 with a JSON sidecar.

    The sidecar ``<path>.json`` lists ``name``, ``shape`` and element ``offset``
    of every array in order.
    """
    path = Path(path)
    entries = []
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(arr.tobytes(order="C"))
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    sidecar = {"format": DUMP_FORMAT, "order": "C", "arrays": entries}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")
    return path


def read_dump(path) -> dict:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    if meta.get("format") != DUMP_FORMAT:
        raise ValueError(f"unsupported dump format {meta.get('format')}")
    flat = np.fromfile(path, dtype="<f8")
    out = {}
    for e in meta["arrays"]:
        size = int(np.prod(e["shape"], dtype=int))
        out[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"])
    return out


def write_matrix_csv(path, matrix, header=None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path, header: bool = False) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows])


def relative_error(estimate, truth) -> float:
    """``|estimate - truth| / |truth|`` in the Euclidean (mode-space L2) norm."""
    truth = np.asarray(truth, dtype=float)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("relative error is undefined for a zero truth")
    return float(np.linalg.norm(np.asarray(estimate, dtype=float) - truth) / norm)


# Diverging blue-white-red table: value position in [0, 1] -> RGB.
COLORMAP_TABLE = np.array([
    [0.00, 5, 48, 97],
    [0.25, 67, 147, 195],
    [0.50, 247, 247, 247],
    [0.75, 214, 96, 77],
    [1.00, 103, 0, 31],
])


def colormap(u) -> np.ndarray:
    """Map values in [0, 1] to uint8 RGB by linear interpolation in ``COLORMAP_TABLE``."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    rgb = np.stack([np.interp(u, COLORMAP_TABLE[:, 0], COLORMAP_TABLE[:, c]) for c in (1, 2, 3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def heatmap_pixels(matrix, vmin=None, vmax=None, upscale: int = 1) -> np.ndarray:
    """RGB pixel array for ``matrix`` (rows = time, columns = space).

    The colour scale is symmetric about zero unless both limits are given; a
    constant matrix maps to the centre colour.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if vmin is None or vmax is None:
        bound = float(np.max(np.abs(matrix))) if matrix.size else 0.0
        vmin, vmax = -bound, bound
    span = vmax - vmin
    u = np.full(matrix.shape, 0.5) if span <= 0 else (matrix - vmin) / span
    rgb = colormap(u)
    if upscale > 1:
        rgb = np.repeat(np.repeat(rgb, upscale, axis=0), upscale, axis=1)
    return rgb


def render_heatmap(matrix, path, vmin=None, vmax=None, upscale: int = 1) -> Path:
    """Write an 8-bit RGB, non-interlaced PNG heatmap."""
    from PIL import Image

    if upscale < 1 or int(upscale) != upscale:
        raise ValueError("upscale must be a positive integer")
    pixels = heatmap_pixels(matrix, vmin, vmax, int(upscale))
    path = Path(path)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG", optimize=False)
    return path
