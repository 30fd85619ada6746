"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"TQMXCKPT"
    uint32    format version (1)
    uint64    header length H
    H bytes   UTF-8 JSON header
    payload   float32 little-endian values, tensors back to back

The header holds the config snapshot, counters, RNG state, optimizer scalars
and a tensor table: ``{"name", "group", "shape", "offset", "count"}`` with
``offset``/``count`` in float32 elements. ``group`` is ``params`` for network
weights, ``adam_m``/``adam_v`` (or ``rms_v``) for optimizer moments.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..numeric_core import ConfigurationError, OptimizerState

MAGIC = b"TQMXCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    """Unreadable, truncated or version-incompatible checkpoint file."""


class TransferIncompatibleError(ConfigurationError):
    """The checkpoint's entity feature space differs from the target scenario's."""


@dataclass
class Checkpoint:
    config: dict[str, Any]
    params: dict[str, torch.Tensor]
    optimizer: OptimizerState | None = None
    counters: dict[str, int] = field(default_factory=dict)
    rng_state: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def obs_features(self) -> int:
        return int(self.extra["obs_features"])

    @property
    def state_features(self) -> int:
        return int(self.extra["state_features"])


def _moment_groups(kind: str) -> tuple[str, str]:
    return ("adam_m", "adam_v") if kind == "adam" else ("rms_unused", "rms_v")


def save_checkpoint(ckpt: Checkpoint, path: str | Path, include_optimizer: bool = True) -> Path:
    """Write atomically (temporary file in the same directory, then rename)."""
    path = Path(path)
    tensors: list[tuple[str, str, torch.Tensor]] = [(k, "params", v) for k, v in sorted(ckpt.params.items())]
    opt_header = None
    if include_optimizer and ckpt.optimizer is not None:
        opt = ckpt.optimizer
        g1, g2 = _moment_groups(opt.kind)
        for name in sorted(opt.moments):
            m, v = opt.moments[name]
            if opt.kind == "adam":
                tensors.append((name, g1, m))
            tensors.append((name, g2, v))
        opt_header = {
            "kind": opt.kind, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "decay": opt.decay, "clip_norm": opt.clip_norm, "step": opt.step,
        }
    table, chunks, offset = [], [], 0
    for name, group, t in tensors:
        arr = t.detach().cpu().numpy().astype("<f4", copy=False).ravel()
        table.append({"name": name, "group": group, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "counters": ckpt.counters,
        "rng_state": ckpt.rng_state,
        "optimizer": opt_header,
        "extra": ckpt.extra,
        "tensors": table,
        "payload_floats": offset,
    }
    head = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)))
            fh.write(head)
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size + head_len
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size : start])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[start:]
    expected = header["payload_floats"] * 4
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected} (truncated?)")
    values = np.frombuffer(payload, dtype="<f4")
    params: dict[str, torch.Tensor] = {}
    moments: dict[str, dict[str, torch.Tensor]] = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if count != entry["count"] or entry["offset"] + count > values.size:
            raise CheckpointError(f"{path}: inconsistent shape metadata for {entry['name']}")
        arr = values[entry["offset"] : entry["offset"] + count].reshape(entry["shape"])
        t = torch.from_numpy(arr.astype(np.float32))
        if entry["group"] == "params":
            params[entry["name"]] = t
        else:
            moments.setdefault(entry["name"], {})[entry["group"]] = t
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = OptimizerState(
            kind=o["kind"], lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
            decay=o["decay"], clip_norm=o["clip_norm"], step=o["step"],
        )
        g1, g2 = _moment_groups(opt.kind)
        for name, groups in moments.items():
            v = groups[g2]
            m = groups.get(g1, torch.zeros_like(v))
            opt.moments[name] = [m, v]
    return Checkpoint(
        config=header["config"],
        params=params,
        optimizer=opt,
        counters=header.get("counters", {}),
        rng_state=header.get("rng_state"),
        extra=header.get("extra", {}),
    )


def check_transfer_compatible(ckpt: Checkpoint, obs_features: int, state_features: int) -> None:
    if ckpt.obs_features != obs_features or ckpt.state_features != state_features:
        raise TransferIncompatibleError(
            "entity feature spaces differ: checkpoint has "
            f"z_obs={ckpt.obs_features}, z_state={ckpt.state_features}; "
            f"scenario needs z_obs={obs_features}, z_state={state_features}"
        )
