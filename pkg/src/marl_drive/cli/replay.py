"""Replay logs: JSON lines recording every decision so a run can be re-simulated.

Line 1 is a header (format, code version, physics signature, seed, config);
then ``reset`` records (the seed passed to ``reset``) and ``step`` records
(policy action indices, full vehicle state vectors after the step, rewards
and events); the last line is a footer with per-episode summaries.  Floats are
written with ``repr`` precision so states round-trip exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .. import __version__

REPLAY_FORMAT = "marl_drive-replay"
REPLAY_VERSION = 1
DIVERGENCE_TOL = 1e-12


class ReplayError(ValueError):
    """Unreadable log, or one recorded by incompatible physics code."""


def physics_signature() -> str:
    """Hash of the source files that determine simulated trajectories."""
    h = hashlib.sha256()
    pkg = resources.files("marl_drive")
    for name in ("dynamics.py", "sensors.py", "world/geometry.py", "world/maps.py", "world/track.py",
                 "world/intersection.py", "envs/common.py", "envs/intersection.py", "envs/race.py"):
        h.update(name.encode())
        h.update(pkg.joinpath(name).read_bytes())
    return h.hexdigest()[:16]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


class ReplayWriter:
    """Append-only writer; use as a context manager."""

    def __init__(self, path: str, header: dict):
        self._f = open(path, "w", encoding="utf-8", newline="\n")
        head = {"kind": "header", "format": REPLAY_FORMAT, "version": REPLAY_VERSION,
                "code_version": __version__, "physics_signature": physics_signature(), **header}
        self._write(head)
        self._closed = False

    def _write(self, obj) -> None:
        self._f.write(_dump(obj) + "\n")

    def reset(self, seed) -> None:
        self._write({"kind": "reset", "seed": seed})

    def step(self, t: int, actions: np.ndarray, states: np.ndarray, result) -> None:
        self._write({
            "kind": "step",
            "t": int(t),
            "actions": np.asarray(actions, dtype=int).tolist(),
            "states": [[float(v) for v in row] for row in np.asarray(states)],
            "rewards": {k: [float(v) for v in np.asarray(r)] for k, r in result.rewards.items()},
            "dones": [bool(d) for d in result.dones],
            "events": [[int(a), str(k), d if isinstance(d, (int, float, str)) or d is None else str(d)]
                       for a, k, d in result.events],
        })

    def close(self, episodes: list | None = None) -> None:
        if not self._closed:
            self._write({"kind": "footer", "episodes": episodes or []})
            self._f.close()
            self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_replay(path: str):
    """(header or None, records, footer or None).  An empty file has no header."""
    header, records, footer = None, [], None
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}:{n}: not valid JSON ({exc.msg})") from exc
            kind = obj.get("kind") if isinstance(obj, dict) else None
            if n == 1 or header is None:
                if kind != "header" or obj.get("format") != REPLAY_FORMAT:
                    raise ReplayError(f"{path}:{n}: missing replay header")
                header = obj
            elif kind in ("reset", "step"):
                records.append((n, obj))
            elif kind == "footer":
                footer = obj
            else:
                raise ReplayError(f"{path}:{n}: unknown record kind {kind!r}")
    return header, records, footer


@dataclass
class ReplayReport:
    steps: int = 0
    first_divergence: int | None = None      # 't' of the first divergent step record
    line: int | None = None                  # its line in the log
    max_error: float = 0.0
    detail: str = ""

    @property
    def diverged(self) -> bool:
        return self.first_divergence is not None


def check_compatible(header: dict) -> None:
    if header.get("version") != REPLAY_VERSION:
        raise ReplayError(f"replay format version {header.get('version')} is not supported (need {REPLAY_VERSION})")
    sig = physics_signature()
    if header.get("physics_signature") != sig:
        raise ReplayError(
            f"log was recorded with physics signature {header.get('physics_signature')} but this code has {sig}; "
            "trajectories would not be comparable, so the replay is refused")


def resimulate(header: dict, records, env) -> ReplayReport:
    """Feed the recorded actions to ``env`` and compare every recorded state."""
    from ..envs.common import InvalidAction, EpisodeFinished

    report = ReplayReport()
    for line, rec in records:
        if rec["kind"] == "reset":
            env.reset(rec["seed"])
            continue
        report.steps += 1
        try:
            actions = np.asarray(rec["actions"], dtype=np.int64)
            env.step(env.actions_from_indices(actions))
        except (InvalidAction, EpisodeFinished, IndexError, ValueError) as exc:
            report.first_divergence, report.line = rec["t"], line
            report.max_error = float("inf")
            report.detail = f"recorded action cannot be applied: {exc}"
            return report
        recorded = np.asarray(rec["states"], dtype=float)
        err = float(np.max(np.abs(env.states - recorded))) if recorded.shape == env.states.shape else float("inf")
        report.max_error = max(report.max_error, err)
        if not err <= DIVERGENCE_TOL:
            report.first_divergence, report.line = rec["t"], line
            report.detail = f"state differs by {err:.3e}"
            return report
    return report
