"""Binary checkpoints.

Layout: magic ``ULFT``, little-endian uint32 version, uint32 header length,
a JSON header (resolutions, channel widths, density scale, optimizer step
and the ordered list of arrays), then every array as 64-bit little-endian
floats in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import InputError, MissingInputError
from .grid import GROUPS, MultiResGrid
from .optim import AdamState

MAGIC = b"ULFT"
VERSION = 1


def save_checkpoint(path, grid: MultiResGrid, state: AdamState | None = None,
                    meta: dict | None = None) -> None:
    arrays = [(f"param/{g}", grid.params[g]) for g in GROUPS]
    arrays.append(("background", grid.background))
    if state is not None:
        for k in sorted(state.m):
            arrays.append((f"adam_m/{k}", state.m[k]))
            arrays.append((f"adam_v/{k}", state.v[k]))
    header = {
        "resolutions": list(grid.resolutions),
        "n_instance": grid.n_instance,
        "density_scale": grid.density_scale,
        "adam_step": None if state is None else state.step,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(hb)))
        f.write(hb)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(grid, adam_state_or_None, meta)``."""
    try:
        f = open(path, "rb")
    except FileNotFoundError:
        raise MissingInputError(f"checkpoint not found: {path}") from None
    with f:
        if f.read(4) != MAGIC:
            raise InputError(f"{path} is not a field checkpoint")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape))
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise InputError(f"{path} is truncated")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    params = {g: arrays[f"param/{g}"] for g in GROUPS}
    grid = MultiResGrid(tuple(header["resolutions"]), header["n_instance"], params,
                        arrays["background"], header["density_scale"])
    state = None
    if header["adam_step"] is not None:
        state = AdamState(step=header["adam_step"])
        for name, a in arrays.items():
            if name.startswith("adam_m/"):
                state.m[name[7:]] = a
            elif name.startswith("adam_v/"):
                state.v[name[7:]] = a
    return grid, state, header["meta"]
