"""Binary policy checkpoints and demonstration files.

Both formats are: an 8-byte magic string, a little-endian uint32 header
length, a UTF-8 JSON header (sorted keys), then little-endian arrays whose
shapes the header declares.  See docs/formats.md.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .demos import DemoDataset
from .policy import MlpPolicy

CHECKPOINT_MAGIC = b"MDCKPT01"
DEMO_MAGIC = b"MDDEMO01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not fit the requested scenario."""


class DemoFileError(ValueError):
    """Unreadable demonstration file."""


def _write(path: str, magic: bytes, header: dict, arrays) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a).tobytes())


def _read(path: str, magic: bytes, error):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:8] != magic:
        raise error(f"{path}: not a {magic.decode()} file")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise error(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise error(f"{path}: unsupported format version {header.get('format_version')!r}")
    return header, memoryview(data)[12 + n:]


def _take(buf, offset: int, dtype, count: int, path: str, error):
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(buf):
        raise error(f"{path}: truncated data section")
    return np.frombuffer(buf[offset:offset + size], dtype=dtype).copy(), offset + size


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path: str, policies, meta: dict | None = None) -> None:
    """One or more policies (one per agent for per-agent training)."""
    policies = list(policies) if isinstance(policies, (list, tuple)) else [policies]
    header = {
        "format_version": FORMAT_VERSION,
        "policies": [{"obs_dim": p.obs_dim, "heads": list(p.heads), "hidden": list(p.hidden),
                      "n_params": p.n_params} for p in policies],
        "meta": meta or {},
    }
    arrays = []
    for p in policies:
        arrays += [p.obs_scale.astype("<f8"), p.params.astype("<f8")]
    _write(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path: str) -> tuple[list[MlpPolicy], dict]:
    header, buf = _read(path, CHECKPOINT_MAGIC, CheckpointError)
    policies = []
    off = 0
    for spec in header["policies"]:
        scale, off = _take(buf, off, "<f8", spec["obs_dim"], path, CheckpointError)
        params, off = _take(buf, off, "<f8", spec["n_params"], path, CheckpointError)
        try:
            policies.append(MlpPolicy(spec["obs_dim"], spec["heads"], spec["hidden"], params=params, obs_scale=scale))
        except ValueError as exc:
            raise CheckpointError(f"{path}: architecture does not match parameters ({exc})") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return policies, header["meta"]


def check_architecture(policies, obs_dim: int, heads, n_policies: int | None = None) -> None:
    for p in policies:
        if p.obs_dim != obs_dim or tuple(p.heads) != tuple(heads):
            raise CheckpointError(
                f"checkpoint policy expects obs {p.obs_dim} / heads {list(p.heads)}, "
                f"scenario provides obs {obs_dim} / heads {list(heads)}")
    if n_policies is not None and len(policies) not in (1, n_policies):
        raise CheckpointError(f"checkpoint holds {len(policies)} policies, scenario needs 1 or {n_policies}")


# --------------------------------------------------------------------------
# Demonstrations
# --------------------------------------------------------------------------


def save_demos(path: str, demos: DemoDataset, meta: dict | None = None) -> None:
    n, d = demos.obs.shape
    header = {
        "format_version": FORMAT_VERSION,
        "n": int(n),
        "obs_dim": int(d),
        "n_heads": int(demos.actions.shape[1]),
        "metadata": demos.metadata,
        "meta": meta or {},
    }
    _write(path, DEMO_MAGIC, header, [demos.obs.astype("<f8"), demos.actions.astype("<i8"), demos.episode.astype("<i8")])


def load_demos(path: str) -> DemoDataset:
    header, buf = _read(path, DEMO_MAGIC, DemoFileError)
    n, d, h = header["n"], header["obs_dim"], header["n_heads"]
    obs, off = _take(buf, 0, "<f8", n * d, path, DemoFileError)
    act, off = _take(buf, off, "<i8", n * h, path, DemoFileError)
    ep, off = _take(buf, off, "<i8", n, path, DemoFileError)
    if off != len(buf):
        raise DemoFileError(f"{path}: {len(buf) - off} trailing bytes")
    return DemoDataset(obs.reshape(n, d), act.reshape(n, h), ep, header["metadata"])
