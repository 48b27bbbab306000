"""Plain-file outputs: CSV tables, JSON sidecars and PGM/PPM images."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import IoFailure, ParseError

# viridis sampled at nine evenly spaced points; interpolated to 256 entries
_VIRIDIS_ANCHORS = np.array(
    [
        (68, 1, 84),
        (71, 44, 122),
        (59, 81, 139),
        (44, 113, 142),
        (33, 144, 141),
        (39, 173, 129),
        (92, 200, 99),
        (170, 220, 50),
        (253, 231, 37),
    ],
    dtype=float,
)


def colormap_lut() -> np.ndarray:
    """256 x 3 uint8 perceptually uniform colour table."""
    pos = np.linspace(0.0, 1.0, _VIRIDIS_ANCHORS.shape[0])
    t = np.linspace(0.0, 1.0, 256)
    lut = np.column_stack([np.interp(t, pos, _VIRIDIS_ANCHORS[:, c]) for c in range(3)])
    return np.round(lut).astype(np.uint8)


def _open(path, mode="w", **kw):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, **kw)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    """JSON with sorted keys; non-finite floats become null."""
    with _open(path, newline="\n") as f:
        json.dump(_clean(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def write_table(path, columns: dict) -> None:
    """CSV with one column per entry of ``columns`` (all equally long)."""
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    with _open(path, newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_histogram_csv(hist, path) -> None:
    write_table(
        path,
        {"tau_s": hist.centers, "counts": hist.counts, "normalization": hist.normalization, "g2": hist.g2},
    )


def write_matrix_csv(matrix, path) -> None:
    with _open(path, newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in np.asarray(matrix):
            w.writerow([_fmt(v) for v in row])


def _to_bytes_image(density):
    """Scale to 0..255 with the highest lifetime row on top."""
    d = np.asarray(density, dtype=float)
    peak = d.max()
    scaled = np.zeros(d.shape) if peak <= 0 else d / peak
    return np.round(scaled[::-1] * 255.0).astype(np.uint8)


def write_pgm(density, path) -> None:
    img = _to_bytes_image(density)
    h, w = img.shape
    with _open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(density, path, lut=None) -> None:
    img = _to_bytes_image(density)
    lut = colormap_lut() if lut is None else np.asarray(lut, dtype=np.uint8)
    rgb = lut[img]
    h, w = img.shape
    with _open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_table(path, names=None) -> dict:
    """Read a numeric CSV into float arrays keyed by column name.

    A first row that does not parse as numbers is taken as the header;
    otherwise columns are named by ``names``.
    """
    try:
        with open(path, newline="") as f:
            rows = [(i, r) for i, r in enumerate(csv.reader(f), start=1)]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    rows = [(i, r) for i, r in rows if r and any(c.strip() for c in r)]
    if not rows:
        return {n: np.zeros(0) for n in (names or [])}
    first = rows[0][1]
    try:
        [float(c) for c in first]
        header = None
    except ValueError:
        header = [c.strip() for c in first]
        rows = rows[1:]
    cols = header or list(names or [f"col{k}" for k in range(len(first))])
    out = {n: [] for n in cols}
    for i, r in rows:
        if len(r) != len(cols):
            raise ParseError(i, f"expected {len(cols)} columns, got {len(r)}")
        for n, v in zip(cols, r):
            try:
                out[n].append(float(v))
            except ValueError:
                raise ParseError(i, f"{n}: {v!r} is not a number") from None
    return {n: np.asarray(v) for n, v in out.items()}
