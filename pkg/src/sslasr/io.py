"""On-disk formats: FEAT1 feature files, SSLCKPT1 checkpoints, TSV
manifests, JSONL metric logs, and key=value config files.

All binary formats are little-endian regardless of host byte order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import Tensor

FEAT_MAGIC = b"FEAT1\x00"
CKPT_MAGIC = b"SSLCKPT1"

_DTYPE_TO_CODE = {"float32": "<f4", "float64": "<f8"}


# ---------------------------------------------------------------------------
# FEAT1: single-utterance feature matrix
# ---------------------------------------------------------------------------


def write_feat(path, feats: np.ndarray, shift_ms: float, window_ms: float) -> None:
    """magic, u32 T, u32 D, f32 shift_ms, f32 window_ms, T*D float32 rows."""
    f = np.ascontiguousarray(np.asarray(feats, dtype=np.float32))
    if f.ndim != 2:
        raise ValueError("FEAT1 expects a 2-D (frames, dims) array")
    header = FEAT_MAGIC + struct.pack("<IIff", f.shape[0], f.shape[1], shift_ms, window_ms)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f.astype("<f4", copy=False).tobytes(order="C"))


def read_feat(path):
    """Returns (feats float32 (T, D), shift_ms, window_ms)."""
    raw = Path(path).read_bytes()
    if raw[: len(FEAT_MAGIC)] != FEAT_MAGIC:
        raise ValueError("bad FEAT1 magic")
    off = len(FEAT_MAGIC)
    t, d, shift_ms, window_ms = struct.unpack_from("<IIff", raw, off)
    off += struct.calcsize("<IIff")
    need = t * d * 4
    if len(raw) - off != need:
        raise ValueError("truncated FEAT1 payload")
    feats = np.frombuffer(raw, dtype="<f4", count=t * d, offset=off).reshape(t, d)
    return feats.astype(np.float32), float(shift_ms), float(window_ms)


# ---------------------------------------------------------------------------
# SSLCKPT1: named tensors + JSON header with config/provenance/rng state
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict  # name -> np.ndarray
    config: dict
    provenance: dict
    rng_state: dict | None
    version: int = 1


def save_checkpoint(path, params: dict, config: dict, provenance: dict,
                    rng_state: dict | None = None) -> None:
    """params maps name -> Tensor or ndarray (float32/float64 only)."""
    table = []
    payloads = []
    offset = 0
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPE_TO_CODE:
            raise TypeError(f"unsupported checkpoint dtype '{dtype}' for '{name}'")
        blob = np.ascontiguousarray(arr).astype(_DTYPE_TO_CODE[dtype], copy=False).tobytes(order="C")
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        payloads.append(blob)
        offset += len(blob)
    header = {
        "version": 1,
        "provenance": dict(provenance),
        "config": dict(config),
        "tensors": table,
        "rng_state": rng_state,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError("bad SSLCKPT1 magic")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if off + hlen > len(raw):
        raise ValueError("truncated SSLCKPT1 header")
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    params = {}
    for entry in header["tensors"]:
        code = _DTYPE_TO_CODE[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = off + entry["offset"]
        end = start + count * np.dtype(code).itemsize
        if end > len(raw):
            raise ValueError("truncated SSLCKPT1 payload")
        arr = np.frombuffer(raw, dtype=code, count=count, offset=start).reshape(shape)
        params[entry["name"]] = arr.astype(entry["dtype"])
    return Checkpoint(
        params=params,
        config=header["config"],
        provenance=header["provenance"],
        rng_state=header.get("rng_state"),
        version=header["version"],
    )


# ---------------------------------------------------------------------------
# TSV manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    utt_id: str
    path: str
    transcript: str  # space-separated token ids
    domain: str


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id\tpath\ttranscript\tdomain\n")
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.path}\t{e.transcript}\t{e.domain}\n")


def read_manifest(path) -> list:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"manifest line {lineno}: expected 4 tab-separated fields")
            entries.append(ManifestEntry(*fields))
    seen = set()
    for e in entries:
        if e.utt_id in seen:
            raise ValueError(f"duplicate utterance id in manifest: {e.utt_id!r}")
        seen.add(e.utt_id)
    return entries


# ---------------------------------------------------------------------------
# JSONL metric logs and key=value configs
# ---------------------------------------------------------------------------


def append_jsonl(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def parse_value(raw: str):
    """Coerce a config token: bool literals, then int, then float, else str."""
    s = raw.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def read_config(path) -> dict:
    """`key = value` lines; '#' starts a comment; blank lines ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            out[key.strip()] = parse_value(raw)
    return out


def write_config(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]}\n")
