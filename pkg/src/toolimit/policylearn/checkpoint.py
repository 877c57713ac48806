"""Policy checkpoints and training curves.

Checkpoint layout (all integers little-endian)::

    b"TLPOLICY"            8-byte magic
    uint32                 header length L
    L bytes                UTF-8 JSON header: {"format": 1, "kind": "gaussian-mlp",
                           "sizes": [M, 400, 300, N], "arrays": [[name, shape], ...]}
    float64 data           arrays in header order, each row-major ("<f8")

Arrays are ``obs_mean``, ``obs_std``, ``W1, b1, W2, b2, W3, b3`` (``W`` has
shape (fan_in, fan_out)) and ``log_std``. A value network uses kind
``"value-mlp"`` and has no ``log_std``. JSON keys are sorted so identical
models give identical bytes.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .networks import MLP, GaussianPolicy, ValueNet

MAGIC = b"TLPOLICY"
LAYER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def _arrays(model):
    arrs = [("obs_mean", model.obs_mean), ("obs_std", model.obs_std)]
    arrs += list(zip(LAYER_NAMES, model.net.params))
    if isinstance(model, GaussianPolicy):
        arrs.append(("log_std", model.log_std))
    return arrs


def checkpoint_bytes(model) -> bytes:
    arrs = _arrays(model)
    W = model.net.params
    header = {
        "format": 1,
        "kind": "gaussian-mlp" if isinstance(model, GaussianPolicy) else "value-mlp",
        "sizes": [W[0].shape[0], W[0].shape[1], W[2].shape[1], W[4].shape[1]],
        "arrays": [[name, list(a.shape)] for name, a in arrs],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrs)
    return MAGIC + struct.pack("<I", len(hb)) + hb + body


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    (hl,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hl].decode())
    if header.get("format") != 1:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
    pos = 12 + hl
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        chunk = data[pos:pos + 8 * n]
        if len(chunk) != 8 * n:
            raise ValueError(f"{path}: truncated at array {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(float)
        pos += 8 * n
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    net = MLP.__new__(MLP)
    net.params = [arrays[k] for k in LAYER_NAMES]
    if header["kind"] == "gaussian-mlp":
        model = GaussianPolicy.__new__(GaussianPolicy)
        model.log_std = arrays["log_std"]
    elif header["kind"] == "value-mlp":
        model = ValueNet.__new__(ValueNet)
    else:
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")
    model.net = net
    model.obs_mean = arrays["obs_mean"]
    model.obs_std = arrays["obs_std"]
    return model


CURVE_FIELDS = ("iteration", "env_steps", "mean_return", "mean_goal_return", "success_rate",
                "eval_goal_return", "eval_success_rate", "adr_ranges")


def write_curve(rows, path) -> None:
    """One CSV row per iteration; ADR ranges as ``name:lo:hi`` joined by ``;``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in rows:
            ranges = row.get("adr_ranges") or {}
            w.writerow([row["iteration"], row["env_steps"]]
                       + [repr(float(row[k])) for k in CURVE_FIELDS[2:7]]
                       + [";".join(f"{k}:{lo!r}:{hi!r}" for k, (lo, hi) in sorted(ranges.items()))])


def read_curve(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"iteration": int(rec["iteration"]), "env_steps": int(rec["env_steps"])}
            for k in CURVE_FIELDS[2:7]:
                row[k] = float(rec[k])
            ranges = {}
            for item in filter(None, rec["adr_ranges"].split(";")):
                name, lo, hi = item.rsplit(":", 2)
                ranges[name] = (float(lo), float(hi))
            row["adr_ranges"] = ranges
            rows.append(row)
    return rows
