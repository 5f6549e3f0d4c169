"""Binary snapshot (LMDF) and checkpoint (LMDW) formats, trajectory directories.

LMDF v1, little endian::

    0   4s  magic b"LMDF"
    4   u32 version = 1
    8   u32 H
    12  u32 W
    16  u32 n_fields = 3
    20  u32 dtype (0 = float32, 1 = float64)
    24  f64 time
    32  f64 cA_ref (NaN when unknown)
    40  f64 dx
    48  field data, row-major, phi then cA then cB

The header is 48 bytes, so the file size is ``48 + 3*H*W*itemsize``.

LMDW v1, little endian::

    4s  magic b"LMDW"
    u32 version = 1
    u32 n_entries
    n_entries x (u32 name_len, name utf-8, u32 rank, rank x u32 dims)
    float64 weights, concatenated in manifest order
    u32 meta_len, meta JSON utf-8: {"unet_config": ..., "theta_scaling": ...}
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .fields import FieldState
from .model import UNetConfig, architecture_manifest

SNAPSHOT_MAGIC = b"LMDF"
CHECKPOINT_MAGIC = b"LMDW"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII3d")
HEADER_SIZE = _HEADER.size  # 48
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
MANIFEST_NAME = "manifest.json"


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


def snapshot_size(H: int, W: int, dtype_code: int = 1) -> int:
    return HEADER_SIZE + 3 * H * W * _DTYPE_CODES[dtype_code].itemsize


def write_snapshot(state: FieldState, path, dtype: str = "float64") -> None:
    code = {"float32": 0, "float64": 1}[dtype]
    dt = _DTYPE_CODES[code]
    H, W = state.shape
    ref = math.nan if state.cA_ref is None else float(state.cA_ref)
    header = _HEADER.pack(SNAPSHOT_MAGIC, VERSION, H, W, 3, code, float(state.time), ref, float(state.dx))
    body = b"".join(np.ascontiguousarray(a, dtype=dt).tobytes() for a in (state.phi, state.cA, state.cB))
    with open(path, "wb") as fh:
        fh.write(header + body)


def read_snapshot(path, validate: bool = True) -> FieldState:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header, expected {HEADER_SIZE} bytes, got {len(data)}", len(data))
    magic, version, H, W, nf, code, time, ref, dx = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    if nf != 3:
        raise FormatError(f"{path}: n_fields must be 3, got {nf}", 16)
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}", 20)
    expected = snapshot_size(H, W, code)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}", min(len(data), expected))
    arr = np.frombuffer(data, dtype=_DTYPE_CODES[code], offset=HEADER_SIZE).reshape(3, H, W)
    state = FieldState(arr[0].copy(), arr[1].copy(), arr[2].copy(), dx=dx, time=time,
                       cA_ref=None if math.isnan(ref) else ref)
    if validate:
        state.check()
    return state


# ---------------------------------------------------------------- trajectories

def write_trajectory(states, directory, meta: dict | None = None, dtype: str = "float64") -> list[str]:
    """Write ``snap_00000.lmdf``... plus a manifest listing files and times."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, s in enumerate(states):
        name = f"snap_{i:05d}.lmdf"
        write_snapshot(s, d / name, dtype=dtype)
        names.append(name)
    manifest = {"format": "LMDF", "version": VERSION, "files": names,
                "times": [float(s.time) for s in states], **(meta or {})}
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return names


def read_trajectory(directory) -> list[FieldState]:
    d = Path(directory)
    mf = d / MANIFEST_NAME
    if mf.exists():
        files = json.loads(mf.read_text())["files"]
    else:
        files = sorted(p.name for p in d.glob("*.lmdf"))
    if not files:
        raise FileNotFoundError(f"no snapshots in {d}")
    return [read_snapshot(d / f) for f in files]


# ---------------------------------------------------------------- checkpoints

def _encode_manifest(manifest) -> bytes:
    out = [struct.pack("<I", len(manifest))]
    for name, shape in manifest:
        b = name.encode("utf-8")
        out.append(struct.pack("<I", len(b)) + b + struct.pack("<I", len(shape)))
        out.append(struct.pack(f"<{len(shape)}I", *shape))
    return b"".join(out)


def write_checkpoint(params: dict, config: UNetConfig, path, extra: dict | None = None) -> None:
    manifest = architecture_manifest(config)
    names = {n for n, _ in manifest}
    if set(params) != names:
        raise FormatError(f"parameters do not match the architecture manifest: "
                          f"missing={sorted(names - set(params))} orphan={sorted(set(params) - names)}")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", VERSION), _encode_manifest(manifest)]
    for name, shape in manifest:
        a = np.asarray(params[name], dtype="<f8")
        if a.shape != shape:
            raise FormatError(f"{name}: shape {a.shape} != manifest {shape}")
        chunks.append(a.tobytes())
    cfg = config.to_dict()
    meta = {"unet_config": cfg,
            "theta_scaling": {k: cfg[k] for k in ("dtau_min", "dtau_max", "cA_min", "cA_max", "dtau_unit")},
            **(extra or {})}
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(mb)) + mb)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, UNetConfig, dict]:
    """Return ``(params, config, meta)``; the stored manifest must equal the config's."""
    data = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint, need {off + n} bytes, have {len(data)}", off)
        b = data[off:off + n]
        off += n
        return b

    if take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic", 0)
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    (n,) = struct.unpack("<I", take(4))
    manifest = []
    for _ in range(n):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        manifest.append((name, tuple(dims)))
    params = {}
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
    (ml,) = struct.unpack("<I", take(4))
    meta = json.loads(take(ml).decode("utf-8"))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes", off)
    config = UNetConfig.from_dict(meta["unet_config"])
    if manifest != architecture_manifest(config):
        raise FormatError(f"{path}: stored manifest does not match the stored configuration")
    return params, config, meta
