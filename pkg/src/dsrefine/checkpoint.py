"""Checkpoint files shared by the mask estimator and DSRNet.

Layout: one line of UTF-8 JSON (the header, terminated by ``\\n``) followed by
every parameter array as little-endian float64, in the order listed in
``header["shapes"]``.
"""

from __future__ import annotations

import json

import numpy as np

from .dsrnet import DsrnetParams
from .enhance import MaskEstimatorParams

FORMAT_VERSION = 1


def save(path, params, seed: int = 0, step: int = 0):
    if isinstance(params, DsrnetParams):
        variant, extra = "dsrnet", {"n_bins": params.n_bins, "shared_inner": params.shared_inner}
    elif isinstance(params, MaskEstimatorParams):
        variant, extra = params.variant, {"n_bins": params.n_bins, "hidden": list(params.hidden)}
    else:
        raise TypeError(f"cannot checkpoint {type(params).__name__}")
    header = {
        "format_version": FORMAT_VERSION,
        "variant": variant,
        "shapes": [[k, list(v.shape)] for k, v in params.arrays.items()],
        "seed": int(seed),
        "step": int(step),
        **extra,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for v in params.arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load(path):
    """Return ``(params, header)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        arrays = {}
        for name, shape in header["shapes"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameters")
    if header["variant"] == "dsrnet":
        params = DsrnetParams(header["n_bins"], header["shared_inner"], arrays)
    else:
        params = MaskEstimatorParams(header["variant"], header["n_bins"], tuple(header["hidden"]), arrays)
    return params, header
