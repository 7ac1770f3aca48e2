"""File interchange: PPM/PGM images, ASCII PLY, JSON and mask sets.

PGM-16 files carry a header comment ``# scale <s> offset <o> invalid <v>``
so that stored integers q decode to ``offset + q * scale``; the reserved
value ``invalid`` decodes to NaN.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np

from .errors import InputError, MissingInputError
from .labels import MaskSet

PGM16_INVALID = 65535


def _open(path, mode):
    try:
        return open(path, mode)
    except FileNotFoundError:
        raise MissingInputError(f"missing input file: {path}") from None


def _read_header(f, magic: bytes):
    """Parse a netpbm header; returns (width, height, maxval, comments)."""
    tokens, comments = [], []
    if f.read(2) != magic:
        raise InputError(f"{getattr(f, 'name', '?')}: expected {magic.decode()} image")
    while len(tokens) < 3:
        line = f.readline()
        if not line:
            raise InputError(f"{getattr(f, 'name', '?')}: truncated header")
        line = line.strip()
        if line.startswith(b"#"):
            comments.append(line[1:].strip().decode())
            continue
        tokens += line.split()
    w, h, mx = (int(t) for t in tokens[:3])
    return w, h, mx, comments


def write_ppm(path, rgb: np.ndarray) -> None:
    """8-bit binary PPM from floats in [0, 1] (or uint8)."""
    a = np.asarray(rgb)
    if a.dtype != np.uint8:
        a = np.clip(np.round(np.nan_to_num(a) * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(a[..., :3]).tobytes())


def read_ppm(path) -> np.ndarray:
    """uint8 (H, W, 3)."""
    with _open(path, "rb") as f:
        w, h, mx, _ = _read_header(f, b"P6")
        buf = f.read(w * h * 3)
    if len(buf) != w * h * 3:
        raise InputError(f"{path}: truncated image data")
    return np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm8(path, a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise InputError("8-bit PGM values must lie in [0, 255]")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(a.astype(np.uint8).tobytes())


def write_pgm16(path, a: np.ndarray, scale: float = 1.0, offset: float = 0.0) -> None:
    """16-bit big-endian PGM; non-finite values are stored as the invalid code."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape
    ok = np.isfinite(a)
    q = np.full(a.shape, PGM16_INVALID, dtype=np.int64)
    q[ok] = np.round((a[ok] - offset) / scale).astype(np.int64)
    if np.any((q[ok] < 0) | (q[ok] >= PGM16_INVALID)):
        raise InputError("values fall outside the 16-bit range for this scale")
    with open(path, "wb") as f:
        f.write(b"P5\n# scale %r offset %r invalid %d\n%d %d\n65535\n"
                % (float(scale), float(offset), PGM16_INVALID, w, h))
        f.write(q.astype(">u2").tobytes())


def read_pgm(path, raw: bool = False) -> np.ndarray:
    """8-bit PGM as uint8, 16-bit PGM decoded with its scale header.

    With ``raw`` the stored integers are returned unchanged.
    """
    with _open(path, "rb") as f:
        w, h, mx, comments = _read_header(f, b"P5")
        nb = 1 if mx < 256 else 2
        buf = f.read(w * h * nb)
    if len(buf) != w * h * nb:
        raise InputError(f"{path}: truncated image data")
    if nb == 1:
        return np.frombuffer(buf, dtype=np.uint8).reshape(h, w).copy()
    q = np.frombuffer(buf, dtype=">u2").reshape(h, w).astype(np.int64)
    if raw:
        return q
    scale, offset, invalid = 1.0, 0.0, None
    for c in comments:
        m = re.match(r"scale (\S+) offset (\S+) invalid (\d+)", c)
        if m:
            scale, offset, invalid = float(m.group(1)), float(m.group(2)), int(m.group(3))
    out = offset + q * scale
    if invalid is not None:
        out = np.where(q == invalid, np.nan, out)
    return out


def write_ids(path, ids: np.ndarray) -> None:
    """Integer id map as PGM-16 (scale 1)."""
    write_pgm16(path, np.asarray(ids, dtype=np.float64))


def read_ids(path) -> np.ndarray:
    return read_pgm(path, raw=True)


def id_colors(ids: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-colors for an id map; id 0 is black."""
    ids = np.asarray(ids, dtype=np.int64)
    h = (ids * 2654435761) & 0xFFFFFF
    rgb = np.stack([(h >> 16) & 255, (h >> 8) & 255, h & 255], axis=-1).astype(np.uint8)
    rgb[ids == 0] = 0
    return rgb


# ---------------------------------------------------------------- PLY

def write_ply(path, points: np.ndarray, props: dict | None = None) -> None:
    """ASCII PLY with float xyz and integer per-vertex properties."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    props = props or {}
    cols = [np.asarray(v).reshape(-1) for v in props.values()]
    for c in cols:
        if len(c) != len(pts):
            raise InputError("property length differs from point count")
    with open(path, "w", newline="\n") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property double x\nproperty double y\nproperty double z\n")
        for name in props:
            f.write(f"property int {name}\n")
        f.write("end_header\n")
        for i in range(len(pts)):
            row = [repr(float(v)) for v in pts[i]] + [str(int(c[i])) for c in cols]
            f.write(" ".join(row) + "\n")


def read_ply(path):
    """Returns ``(points, props)`` for files written by :func:`write_ply`."""
    with _open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "ply":
        raise InputError(f"{path}: not a PLY file")
    end = lines.index("end_header")
    n = 0
    names = []
    for ln in lines[:end]:
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"]:
            names.append(parts[2])
    rows = [ln.split() for ln in lines[end + 1:end + 1 + n]]
    pts = np.array([[float(v) for v in r[:3]] for r in rows]).reshape(-1, 3)
    props = {name: np.array([int(r[3 + k]) for r in rows], dtype=np.int64)
             for k, name in enumerate(names[3:])}
    return pts, props


# ---------------------------------------------------------------- JSON

def write_json(path, obj) -> None:
    from .evaluation import canonical_json
    with open(path, "w", newline="\n") as f:
        f.write(canonical_json(obj))


def read_json(path):
    with _open(path, "r") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: invalid JSON ({e})") from None


# ---------------------------------------------------------------- mask sets

def mask_layers(ms: MaskSet) -> list:
    """Greedy split into id maps where no two masks of one layer overlap."""
    H, W = ms.shape
    layers = []
    for m in ms.ids:
        pix = ms.pixels[m]
        for img in layers:
            if not img[pix].any():
                img[pix] = m
                break
        else:
            img = np.zeros(H * W, dtype=np.int64)
            img[pix] = m
            layers.append(img)
    return [img.reshape(H, W) for img in layers]


def write_maskset(prefix, ms: MaskSet) -> None:
    """``<prefix>_layer<k>.pgm`` id maps plus ``<prefix>.json`` index."""
    H, W = ms.shape
    layers = mask_layers(ms)
    for k, img in enumerate(layers):
        write_ids(f"{prefix}_layer{k}.pgm", img)
    index = ms.index()
    for rec in index:
        if rec["mask_id"] in ms.label:
            rec["label"] = ms.label[rec["mask_id"]]
    write_json(f"{prefix}.json", {"shape": [H, W], "layers": len(layers), "masks": index})


def read_maskset(prefix) -> MaskSet:
    meta = read_json(f"{prefix}.json")
    H, W = meta["shape"]
    imgs = [read_ids(f"{prefix}_layer{k}.pgm").reshape(-1) for k in range(meta["layers"])]
    ms = MaskSet((H, W))
    for rec in meta["masks"]:
        m = int(rec["mask_id"])
        pix = None
        for img in imgs:
            p = np.flatnonzero(img == m)
            if len(p):
                pix = p
                break
        if pix is None:
            raise InputError(f"{prefix}: mask {m} has no pixels in any layer")
        ms.add(m, pix, rec.get("source", 0), rec.get("kind", "block"), rec.get("parent"),
               rec.get("label"))
    return ms


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
