"""CKP1 checkpoint container.

Layout, little-endian:

    magic      4 bytes, b"CKP1"
    version    u32, currently 1
    hdr_len    u64
    header     hdr_len bytes of UTF-8 JSON
    blobs      f64 arrays, parameters in header["param_order"] order,
               then (if header["has_moments"]) first and second moments
               in the same order

The header records the model config, normalization stats, the RNG seed the
run started from, the optimizer step count, and every parameter shape.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (FormatError, MagicMismatchError, TruncationError,
                     VersionMismatchError)
from .nncore import AdamWState

MAGIC = b"CKP1"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference."""

    config: dict
    normalization: dict
    seed: int
    step: int
    params: dict[str, np.ndarray]
    opt_state: AdamWState | None = None


def _read_exact(f, n: int, section: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncationError(section, n, len(buf))
    return buf


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    order = list(ckpt.params.keys())
    header = {
        "config": ckpt.config,
        "normalization": ckpt.normalization,
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "param_order": order,
        "shapes": {k: list(ckpt.params[k].shape) for k in order},
        "has_moments": ckpt.opt_state is not None,
    }
    if ckpt.opt_state is not None:
        st = ckpt.opt_state
        header["adamw"] = {"beta1": st.beta1, "beta2": st.beta2,
                           "eps": st.eps, "weight_decay": st.weight_decay,
                           "step": st.step}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for k in order:
            f.write(np.ascontiguousarray(ckpt.params[k], dtype="<f8").tobytes())
        if ckpt.opt_state is not None:
            for k in order:
                f.write(np.ascontiguousarray(ckpt.opt_state.m[k],
                                             dtype="<f8").tobytes())
            for k in order:
                f.write(np.ascontiguousarray(ckpt.opt_state.v[k],
                                             dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise MagicMismatchError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise VersionMismatchError(f"unsupported version {version}")
        (hdr_len,) = struct.unpack("<Q", _read_exact(f, 8, "header_length"))
        try:
            header = json.loads(_read_exact(f, hdr_len, "header"))
        except json.JSONDecodeError as e:
            raise FormatError(f"checkpoint header is not valid JSON: {e}") from e
        for key in ("config", "normalization", "seed", "step", "param_order",
                    "shapes", "has_moments"):
            if key not in header:
                raise FormatError(f"checkpoint header missing '{key}'")

        def read_block(name: str, section: str) -> np.ndarray:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, 8 * count, section)
            return np.frombuffer(raw, dtype="<f8", count=count).reshape(
                shape).copy()

        params = {k: read_block(k, f"param[{k}]")
                  for k in header["param_order"]}
        opt_state = None
        if header["has_moments"]:
            hp = header.get("adamw", {})
            opt_state = AdamWState(
                beta1=hp.get("beta1", 0.9), beta2=hp.get("beta2", 0.999),
                eps=hp.get("eps", 1e-8),
                weight_decay=hp.get("weight_decay", 0.01),
                step=hp.get("step", header["step"]))
            opt_state.m = {k: read_block(k, f"moment1[{k}]")
                           for k in header["param_order"]}
            opt_state.v = {k: read_block(k, f"moment2[{k}]")
                           for k in header["param_order"]}
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    return Checkpoint(config=header["config"],
                      normalization=header["normalization"],
                      seed=header["seed"], step=header["step"],
                      params=params, opt_state=opt_state)
