"""Run configuration files: YAML mapped onto the library's config dataclasses.

Every key is checked against the dataclass it configures; unknown keys, wrong
types and out-of-range values are reported as ``file:line: message``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field

import yaml

from ..dynamics import PRESETS, VehicleParams, preset
from ..envs import RACE_OBS_SCALE, IntersectionEnvConfig, RaceEnvConfig
from ..learn import PpoConfig, TrainConfig

SCENARIOS = ("intersection", "race")


class ConfigFileError(ValueError):
    """A configuration problem, located by file and line."""

    def __init__(self, message: str, path: str = "<config>", line: int | None = None):
        self.path, self.line, self.message = path, line, message
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "intersection"
    mode: str = "single"
    seed: int = 0
    vehicle: str = ""                 # preset name; empty = scenario default
    out: str = "runs"
    track: str = ""                   # race track file; empty = bundled track
    demos: tuple = ()                 # race: one demonstration file per agent
    checkpoint: str = ""              # eval: policy checkpoint to load
    checkpoint_every: int = 0         # updates between checkpoints (0 = end only)
    intersection: IntersectionEnvConfig = field(default_factory=IntersectionEnvConfig)
    race: RaceEnvConfig = field(default_factory=RaceEnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    source: str = ""                  # path the config was read from
    text_hash: str = ""               # sha256 of the file contents

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, ppo=self.ppo, seed=self.seed)

    def vehicle_params(self) -> VehicleParams:
        name = self.vehicle or ("nigel" if self.scenario == "intersection" else "f1tenth")
        return preset(name)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in _HIDDEN[RunConfig]:
            d.pop(name)
        for name in _HIDDEN[TrainConfig]:
            d["train"].pop(name)
        return d

    def digest(self) -> str:
        """Hash of the effective configuration (independent of formatting)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def scenario_train_defaults(scenario: str) -> TrainConfig:
    """Training defaults: pure PPO at the intersection; PPO with behavioural
    cloning, GAIL and curiosity (one policy per car, about 2M agent steps) on
    the race track.  The cloning term keeps its full weight for the whole run:
    once it fades, nothing anchors the policies to the demonstrations and late
    updates can undo what was learned."""
    if scenario == "race":
        return TrainConfig(updates=488, reward_weights=(1.0, 1.0, 1.0), bc_weight=1.0, bc_anneal_fraction=0.0,
                           obs_scale=RACE_OBS_SCALE)
    return TrainConfig()


# fields managed elsewhere and never read from a file
_HIDDEN = {
    RunConfig: {"source", "text_hash"},
    TrainConfig: {"ppo", "seed"},
}


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.name not in _HIDDEN.get(cls, set())}


def _describe(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _convert(value, tp, default, where, path):
    """Check a scalar/sequence value against the field's declared type."""
    line = where
    origin = typing.get_origin(tp)
    if origin is typing.Union or isinstance(tp, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        tp = args[0]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigFileError(f"expected true/false, got {value!r}", path, line)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigFileError(f"expected an integer, got {value!r}", path, line)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigFileError(f"expected a number, got {value!r}", path, line)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigFileError(f"expected a string, got {value!r}", path, line)
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigFileError(f"expected a list, got {value!r}", path, line)
        if any(isinstance(v, (dict, list)) for v in value):
            raise ConfigFileError("list items must be scalars", path, line)
        if default and isinstance(default, tuple) and len(default) and isinstance(default[0], float):
            return tuple(_convert(v, float, None, where, path) for v in value)
        return tuple(value)
    raise ConfigFileError(f"unsupported field type {_describe(tp)}", path, line)


def _node_to_value(node, path):
    """Plain Python value from a YAML node plus a line map {key path: line}."""
    lines = {}

    def walk(n, key_path):
        lines[key_path] = n.start_mark.line + 1
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k, v in n.value:
                if not isinstance(k, yaml.ScalarNode):
                    raise ConfigFileError("mapping keys must be plain names", path, k.start_mark.line + 1)
                key = k.value
                if key in out:
                    raise ConfigFileError(f"duplicate key {key!r}", path, k.start_mark.line + 1)
                lines[key_path + (key, "__key__")] = k.start_mark.line + 1
                out[key] = walk(v, key_path + (key,))
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(v, key_path + (i,)) for i, v in enumerate(n.value)]
        return _scalar(n)

    return walk(node, ()), lines


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _build(cls, data: dict, lines: dict, key_path: tuple, path: str, base=None):
    ftypes = _field_types(cls)
    defaults = base if base is not None else cls()
    kwargs = {}
    for key, value in data.items():
        kline = lines.get(key_path + (key, "__key__"))
        if key not in ftypes:
            known = ", ".join(sorted(ftypes))
            raise ConfigFileError(f"unknown key {key!r} in {'.'.join(map(str, key_path)) or 'top level'} "
                                  f"(known: {known})", path, kline)
        tp = ftypes[key]
        vline = lines.get(key_path + (key,), kline)
        if _is_dataclass_type(tp):
            if not isinstance(value, dict):
                raise ConfigFileError(f"{key!r} must be a mapping", path, vline)
            kwargs[key] = _build(tp, value, lines, key_path + (key,), path, getattr(defaults, key))
        else:
            kwargs[key] = _convert(value, tp, getattr(defaults, key), vline, path)
    try:
        obj = cls(**{**{f: getattr(defaults, f) for f in ftypes}, **kwargs})
        validate = getattr(obj, "validate", None)
        if validate is not None and cls is not RunConfig:
            validate()
    except ValueError as exc:
        if isinstance(exc, ConfigFileError):
            raise
        raise ConfigFileError(str(exc), path, _blame(str(exc), data, lines, key_path)) from exc
    return obj


def _blame(message: str, data: dict, lines: dict, key_path: tuple):
    """Line of the first key of this section named in ``message``, else the
    section itself."""
    for key in data:
        if key in message:
            return lines.get(key_path + (key, "__key__"))
    return lines.get(key_path)


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigFileError(f"syntax error: {exc.problem}", path, mark.line + 1 if mark else None) from exc
    if node is None:
        data, lines = {}, {(): 1}
    else:
        if not isinstance(node, yaml.MappingNode):
            raise ConfigFileError("a config file must be a mapping of keys to values", path, node.start_mark.line + 1)
        data, lines = _node_to_value(node, path)
    scenario = data.get("scenario", RunConfig.scenario)
    base = RunConfig(scenario=scenario, train=scenario_train_defaults(scenario)) if scenario in SCENARIOS else None
    cfg = _build(RunConfig, data, lines, (), path, base)

    def line_of(key):
        return lines.get((key, "__key__"), 1)

    if cfg.scenario not in SCENARIOS:
        raise ConfigFileError(f"scenario must be one of {SCENARIOS}", path, line_of("scenario"))
    if cfg.mode not in ("single", "multi"):
        raise ConfigFileError("mode must be 'single' or 'multi'", path, line_of("mode"))
    if cfg.vehicle and cfg.vehicle not in PRESETS:
        raise ConfigFileError(f"unknown vehicle preset {cfg.vehicle!r}; choose from {sorted(PRESETS)}",
                              path, line_of("vehicle"))
    if cfg.checkpoint_every < 0:
        raise ConfigFileError("checkpoint_every must be >= 0", path, line_of("checkpoint_every"))
    if cfg.scenario == "intersection":
        inter = dataclasses.replace(cfg.intersection, mode=cfg.mode)
        try:
            inter.validate(cfg.vehicle_params())
        except ValueError as exc:
            raise ConfigFileError(str(exc), path, lines.get(("intersection",), line_of("mode"))) from exc
        cfg = dataclasses.replace(cfg, intersection=inter)
    try:
        cfg.ppo.validate()
        cfg.train_config().validate()
    except ValueError as exc:
        raise ConfigFileError(str(exc), path, lines.get(("train",), 1)) from exc
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config: {exc.strerror}", path) from exc
    cfg = parse_config(text, path)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if not p or os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    return dataclasses.replace(
        cfg, source=path, text_hash=hashlib.sha256(text.encode()).hexdigest()[:16],
        track=resolve(cfg.track), demos=tuple(resolve(p) for p in cfg.demos),
        checkpoint=resolve(cfg.checkpoint), out=resolve(cfg.out))
