"""Versioned binary checkpoint format.

Layout: magic "NTLC" | version u16 LE | header length u32 LE | header JSON
(UTF-8, sorted keys) | parameter arrays as little-endian float32 in
declaration order | optional Adam moment arrays (m then v, same order) |
8-byte checksum (first 8 bytes of SHA-256 over everything preceding it).

The header carries the network config, lineage, trained step count, rng
state snapshot, config fingerprint and the exact array manifest, so a load
never guesses shapes. Any truncation or bit flip fails the checksum before
any field is interpreted.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError
from ..qnetwork import AdamConfig, AdamState, NetConfig, Params

MAGIC = b"NTLC"
VERSION = 1


@dataclass
class Checkpoint:
    net_config: NetConfig
    params: Params
    adam_state: AdamState | None
    trained_steps: int
    lineage: list[tuple[str, int]]
    rng_state: dict | None
    config_fingerprint: str
    version: int = VERSION


def _checksum(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()[:8]


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    names = list(ckpt.params)
    header = {
        "net_config": ckpt.net_config.to_json(),
        "trained_steps": int(ckpt.trained_steps),
        "lineage": [[task, int(steps)] for task, steps in ckpt.lineage],
        "rng_state": ckpt.rng_state,
        "config_fingerprint": ckpt.config_fingerprint,
        "arrays": [[n, list(ckpt.params[n].shape)] for n in names],
        "adam": None if ckpt.adam_state is None else {
            "step": int(ckpt.adam_state.step),
            **dataclasses.asdict(ckpt.adam_state.config),
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for n in names:
        blob += np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes()
    if ckpt.adam_state is not None:
        for group in (ckpt.adam_state.m, ckpt.adam_state.v):
            for n in names:
                blob += np.ascontiguousarray(group[n], dtype="<f4").tobytes()
    blob += _checksum(bytes(blob))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path: str, expect_net_config: NetConfig | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 18 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if _checksum(blob[:-8]) != blob[-8:]:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 6)
    try:
        header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    net_config = NetConfig.from_json(header["net_config"])
    if expect_net_config is not None and net_config != expect_net_config:
        raise CheckpointError(
            f"{path}: network config mismatch: checkpoint {net_config}, "
            f"expected {expect_net_config}")

    offset = 10 + hlen
    body = blob[:-8]

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: array data truncated")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        offset += nbytes
        return arr.reshape(shape).copy()

    params: Params = {n: take(tuple(shape)) for n, shape in header["arrays"]}
    adam_state = None
    if header["adam"] is not None:
        meta = header["adam"]
        m = {n: take(tuple(shape)) for n, shape in header["arrays"]}
        v = {n: take(tuple(shape)) for n, shape in header["arrays"]}
        adam_state = AdamState(
            config=AdamConfig(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
                              eps=meta["eps"]),
            m=m, v=v, step=int(meta["step"]))
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} unexpected trailing bytes")
    return Checkpoint(
        net_config=net_config,
        params=params,
        adam_state=adam_state,
        trained_steps=int(header["trained_steps"]),
        lineage=[(t, int(s)) for t, s in header["lineage"]],
        rng_state=header["rng_state"],
        config_fingerprint=header["config_fingerprint"],
        version=version,
    )
