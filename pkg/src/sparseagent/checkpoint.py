"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"SPAGCKPT"
    version    u32
    header     u64 length + UTF-8 JSON (sorted keys): scalars, RNG positions,
               config, metrics history
    count      u32
    tensors    count x [u16 name length, name, u8 ndim, u64 dims..., f64 data]
    checksum   32 bytes  SHA-256 of everything above

Floats go through ``repr`` in the header and raw IEEE bytes in the tensor
block, so a save/load round trip is bit-exact. Per-epoch wall-clock seconds
are not stored; restored metrics records carry ``seconds == 0.0``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import optim
from .config import ExperimentConfig, from_dict
from .tensor import RngStream
from .train import MetricsRecord, TrainState

MAGIC = b"SPAGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts += [struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 4 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    (version,) = struct.unpack_from("<I", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    try:
        pos = len(MAGIC) + 4
        (hlen,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        header = json.loads(body[pos : pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            chunk = body[pos : pos + 8 * size]
            if len(chunk) != 8 * size:
                raise CheckpointError(f"tensor {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
            pos += 8 * size
        if pos != len(body):
            raise CheckpointError("trailing bytes after the tensor block")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    return header, tensors


# ---------------------------------------------------------------------------


def _put(tensors, prefix, pset):
    for k, v in pset.items():
        tensors[f"{prefix}/{k}"] = v


def _get(tensors, prefix):
    start = prefix + "/"
    return {k[len(start) :]: v for k, v in tensors.items() if k.startswith(start)}


def state_to_record(cfg: ExperimentConfig, state: TrainState) -> tuple[dict, dict]:
    tensors: dict[str, np.ndarray] = {}
    _put(tensors, "params", state.params)
    _put(tensors, "mask", state.mask)

    u = state.update
    if isinstance(u, optim.SgdState):
        update = {"kind": "sgd", "momentum": u.momentum, "weight_decay": u.weight_decay,
                  "has_buffers": u.velocity is not None}
        if u.velocity is not None:
            _put(tensors, "update/velocity", u.velocity)
    else:
        update = {"kind": "adam", "beta1": u.beta1, "beta2": u.beta2, "eps": u.eps,
                  "weight_decay": u.weight_decay, "t": u.t, "has_buffers": u.m is not None}
        if u.m is not None:
            _put(tensors, "update/m", u.m)
            _put(tensors, "update/v", u.v)

    s = state.snapshot
    snapshot = None
    if s is not None:
        _put(tensors, "snapshot/anchor", s.anchor)
        _put(tensors, "snapshot/anchor_mask", s.anchor_mask)
        _put(tensors, "snapshot/full_grad", s.anchor_full_grad)
        if isinstance(s, optim.AgentState):
            snapshot = {"kind": "agent", "gamma": s.gamma, "alpha": s.alpha, "epoch_length": s.epoch_length,
                        "c_smoothed": s.c_smoothed, "c_hat": s.c_hat, "fixed_c": s.fixed_c,
                        "snapshots": s.snapshots, "has_probe_losses": s.probe_losses_anchor is not None}
            if s.probe_losses_anchor is not None:
                tensors["snapshot_probe_losses"] = s.probe_losses_anchor
        else:
            snapshot = {"kind": "svrg"}

    mvr = None
    if state.mvr is not None:
        mvr = {"a": state.mvr.a, "has_buffers": state.mvr.direction is not None}
        if state.mvr.direction is not None:
            _put(tensors, "mvr/direction", state.mvr.direction)
            _put(tensors, "mvr/prev_params", state.mvr.prev_params)

    tensors["probe_ids"] = state.probe_ids.astype(np.float64)
    if state.snapshot_ids is not None:
        tensors["snapshot_ids"] = state.snapshot_ids.astype(np.float64)

    header = {
        "format": "sparseagent-checkpoint",
        "config": cfg.to_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "rngs": {name: list(rng.state()) for name, rng in state.rngs.items()},
        "update": update,
        "snapshot": snapshot,
        "mvr": mvr,
        "has_snapshot_ids": state.snapshot_ids is not None,
        # wall-clock time stays out so identical runs write identical files
        "metrics": [{k: v for k, v in m.to_dict().items() if k != "seconds"} for m in state.metrics],
        "fault": state.fault,
    }
    return header, tensors


def record_to_state(header: dict, tensors: dict) -> tuple[ExperimentConfig, TrainState]:
    try:
        cfg = from_dict(header["config"])
        u = header["update"]
        if u["kind"] == "sgd":
            update = optim.SgdState(u["momentum"], u["weight_decay"],
                                    _get(tensors, "update/velocity") if u["has_buffers"] else None)
        else:
            update = optim.AdamState(u["beta1"], u["beta2"], u["eps"], u["weight_decay"],
                                     _get(tensors, "update/m") if u["has_buffers"] else None,
                                     _get(tensors, "update/v") if u["has_buffers"] else None, u["t"])
        s = header["snapshot"]
        snapshot = None
        if s is not None:
            parts = (_get(tensors, "snapshot/anchor"), _get(tensors, "snapshot/anchor_mask"),
                     _get(tensors, "snapshot/full_grad"))
            if s["kind"] == "agent":
                snapshot = optim.AgentState(
                    *parts, gamma=s["gamma"], alpha=s["alpha"], epoch_length=s["epoch_length"],
                    c_smoothed=s["c_smoothed"], c_hat=s["c_hat"], fixed_c=s["fixed_c"],
                    probe_losses_anchor=tensors["snapshot_probe_losses"] if s["has_probe_losses"] else None,
                    snapshots=s["snapshots"],
                )
            else:
                snapshot = optim.SvrgState(*parts)
        m = header["mvr"]
        mvr = None
        if m is not None:
            mvr = optim.MvrState(m["a"])
            if m["has_buffers"]:
                mvr.direction = _get(tensors, "mvr/direction")
                mvr.prev_params = _get(tensors, "mvr/prev_params")
        state = TrainState(
            epoch=header["epoch"],
            global_step=header["global_step"],
            params=_get(tensors, "params"),
            mask=_get(tensors, "mask"),
            update=update,
            snapshot=snapshot,
            mvr=mvr,
            rngs={name: RngStream.from_state(v) for name, v in header["rngs"].items()},
            probe_ids=tensors["probe_ids"].astype(np.int64),
            snapshot_ids=tensors["snapshot_ids"].astype(np.int64) if header["has_snapshot_ids"] else None,
            metrics=[MetricsRecord.from_dict(d) for d in header["metrics"]],
            fault=header["fault"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint content is inconsistent: {exc}") from None
    return cfg, state


def save(path, cfg: ExperimentConfig, state: TrainState):
    """Write atomically: a crash mid-write never leaves a half file at ``path``."""
    path = Path(path)
    data = encode(*state_to_record(cfg, state))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load(path) -> tuple[ExperimentConfig, TrainState]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return record_to_state(*decode(data))
