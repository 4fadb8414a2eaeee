"""``marl-drive`` command line: train, eval, replay, map-convert, demo-record.

Exit codes: 0 success, 1 bad input (config, map, checkpoint, demo or log
file), 2 usage error, 3 replay divergence, 4 training diverged (the last good
checkpoint is still written).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys

import numpy as np

from .. import __version__
from ..envs import IntersectionEnv, RaceEnv
from ..learn import (
    CheckpointError,
    DemoFailure,
    DemoFileError,
    Trainer,
    TrainingDiverged,
    check_architecture,
    load_checkpoint,
    load_demos,
    record_demos,
    save_checkpoint,
    save_demos,
)
from ..world import MapParseError, NotATrack, bundled_track, load_occupancy_grid, load_track, save_track, track_from_grid
from ..world.maps import contours, grid_to_segments
from .config import ConfigFileError, RunConfig, load_config
from .replay import ReplayError, ReplayWriter, check_compatible, read_replay, resimulate

log = logging.getLogger("marl_drive.cli")

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_REPLAY_DIVERGED, EXIT_TRAINING_DIVERGED = 0, 1, 2, 3, 4

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.csv"
EVAL_NAME = "eval.csv"


class CliError(Exception):
    """A user-facing failure with an exit code."""

    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("MARL_DRIVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out=args.out)
    return cfg


def make_env(cfg: RunConfig):
    """The environment a run configuration describes."""
    if cfg.scenario == "intersection":
        return IntersectionEnv(cfg.intersection, cfg.vehicle_params(), seed=cfg.seed)
    track = load_track(cfg.track) if cfg.track else bundled_track()
    return RaceEnv(cfg.race, track, cfg.vehicle_params(), seed=cfg.seed)


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "scenario": cfg.scenario, "code_version": __version__}


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv_header(f, kind: str, cfg: RunConfig, columns) -> csv.writer:
    f.write(f"# marl_drive {kind} config_hash={cfg.digest()} seed={cfg.seed} scenario={cfg.scenario}\n")
    w = csv.writer(f, lineterminator="\n")
    w.writerow(columns)
    return w


def _episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    tcfg = cfg.train_config()
    env = make_env(cfg)
    shared = cfg.scenario == "intersection"
    demos = None
    if tcfg.uses_demos:
        n_sets = 1 if shared else env.n_learners
        if len(cfg.demos) != n_sets:
            raise CliError(f"{cfg.source or 'config'}: imitation terms are enabled, so 'demos' must list "
                           f"{n_sets} demonstration file(s) (got {len(cfg.demos)}); record them with demo-record")
        demos = [load_demos(p) for p in cfg.demos]
        for p, d in zip(cfg.demos, demos):
            if d.obs.shape[1] != env.obs_dim or len(d) == 0:
                raise CliError(f"{p}: demonstrations do not fit this scenario (obs dim {d.obs.shape[1]}, "
                               f"{len(d)} samples; need obs dim {env.obs_dim} and at least one sample)")
    os.makedirs(cfg.out, exist_ok=True)
    trainer = Trainer(env, tcfg, shared=shared, demos=demos)
    ckpt_path = os.path.join(cfg.out, CHECKPOINT_NAME)

    def save(extra=None):
        meta = {**_stamp(cfg), "updates": trainer.update_index, "total_steps": trainer.total_steps,
                "config": cfg.to_dict(), **(extra or {})}
        save_checkpoint(ckpt_path, [l.policy for l in trainer.learners], meta)

    columns = tcfg.columns()
    with open(os.path.join(cfg.out, METRICS_NAME), "w", encoding="utf-8", newline="") as f:
        writer = _write_csv_header(f, "metrics", cfg, columns)

        def on_update(tr, rows):
            for row in rows:
                writer.writerow([_cell(row[c]) for c in columns])
            f.flush()
            if cfg.checkpoint_every and tr.update_index % cfg.checkpoint_every == 0:
                save()
            if not args.quiet:
                summary = ", ".join(f"{r['agent']}: R={_cell(r['cumulative_reward']) or '-'}" for r in rows)
                print(f"update {tr.update_index}/{tcfg.updates} steps {tr.total_steps} {summary}", flush=True)

        try:
            trainer.train(on_update)
        except TrainingDiverged as exc:
            save({"diverged": str(exc)})
            print(f"error: training diverged: {exc}; last good policy saved to {ckpt_path}", file=sys.stderr)
            return EXIT_TRAINING_DIVERGED
    save()
    print(f"wrote {ckpt_path} and {os.path.join(cfg.out, METRICS_NAME)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def _greedy(policies, obs):
    if len(policies) == 1:
        return policies[0].act(obs, greedy=True)[0]
    return np.vstack([p.act(obs[k:k + 1], greedy=True)[0] for k, p in enumerate(policies)])


def evaluate_intersection(env, policies, cfg, episodes, replay=None):
    """Greedy intersection episodes; one row per finished agent episode."""
    rows = []
    single = cfg.intersection.mode == "single"
    t = 0
    if single:
        for e in range(episodes):
            seed = _episode_seed(cfg.seed, e)
            obs = env.reset(seed)
            if replay:
                replay.reset(seed)
            ret, length = 0.0, 0
            while True:
                a = _greedy(policies, obs)
                res = env.step(env.actions_from_indices(a))
                t += 1
                if replay:
                    replay.step(t, a, env.states, res)
                ret += float(res.rewards["extrinsic"][0])
                length += 1
                obs = res.obs
                if res.episode_over:
                    rows.append({"episode": e, "agent": 0, "outcome": res.reasons[0], "return": ret, "length": length})
                    break
        return rows
    # several learners respawn independently: evaluate until each has finished
    # ``episodes`` episodes of its own
    seed = _episode_seed(cfg.seed, 0)
    obs = env.reset(seed)
    if replay:
        replay.reset(seed)
    n = env.n_learners
    count = np.zeros(n, dtype=int)
    ret, length = np.zeros(n), np.zeros(n, dtype=int)
    limit = episodes * cfg.intersection.max_episode_steps + 1
    while count.min() < episodes and t < limit:
        a = _greedy(policies, obs)
        res = env.step(env.actions_from_indices(a))
        t += 1
        if replay:
            replay.step(t, a, env.states, res)
        ret += res.rewards["extrinsic"]
        length += 1
        for k in np.nonzero(res.dones)[0]:
            if count[k] < episodes:
                rows.append({"episode": int(count[k]), "agent": int(env.learners[k]), "outcome": res.reasons[k],
                             "return": float(ret[k]), "length": int(length[k])})
            count[k] += 1
            ret[k], length[k] = 0.0, 0
        obs = res.obs
    rows.sort(key=lambda r: (r["episode"], r["agent"]))
    return rows


def evaluate_race(env, policies, cfg, episodes, replay=None):
    """Greedy race episodes; one row per episode and car."""
    rows = []
    t = 0
    for e in range(episodes):
        seed = _episode_seed(cfg.seed, e)
        obs = env.reset(seed)
        if replay:
            replay.reset(seed)
        n = env.n_learners
        # a collision puts the car back on its start pose and restarts its lap,
        # so every completed lap is collision-free
        stats = [{"laps": 0, "best_lap": math.nan, "collisions": 0, "return": 0.0} for _ in range(n)]
        while True:
            a = _greedy(policies, obs)
            res = env.step(env.actions_from_indices(a))
            t += 1
            if replay:
                replay.step(t, a, env.states, res)
            for k in range(n):
                stats[k]["return"] += float(res.rewards["extrinsic"][k])
            for k, kind, detail in res.events:
                if kind == "collision":
                    stats[k]["collisions"] += 1
                elif kind in ("lap", "best_lap"):
                    stats[k]["laps"] += 1
                    if not detail >= stats[k]["best_lap"]:
                        stats[k]["best_lap"] = float(detail)
            obs = res.obs
            if res.episode_over:
                break
        for k in range(n):
            rows.append({"episode": e, "agent": k, **stats[k], "length": env.episode_steps})
    return rows


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    path = args.checkpoint or cfg.checkpoint or os.path.join(cfg.out, CHECKPOINT_NAME)
    policies, meta = load_checkpoint(path)
    env = make_env(cfg)
    check_architecture(policies, env.obs_dim, env.action_heads, env.n_learners)
    if meta.get("scenario") not in (None, cfg.scenario):
        raise CliError(f"{path}: checkpoint was trained on scenario {meta['scenario']!r}, config asks for {cfg.scenario!r}")
    os.makedirs(cfg.out, exist_ok=True)
    replay = None
    rows = []
    if args.replay:
        replay = ReplayWriter(args.replay, {**_stamp(cfg), "config": cfg.to_dict(), "checkpoint": os.path.basename(path),
                                            "episodes": args.episodes})
    try:
        if cfg.scenario == "intersection":
            rows = evaluate_intersection(env, policies, cfg, args.episodes, replay)
            columns = ("episode", "agent", "outcome", "return", "length")
        else:
            rows = evaluate_race(env, policies, cfg, args.episodes, replay)
            columns = ("episode", "agent", "laps", "best_lap", "collisions", "return", "length")
    finally:
        if replay:
            replay.close(rows)
    out_csv = os.path.join(cfg.out, EVAL_NAME)
    with open(out_csv, "w", encoding="utf-8", newline="") as f:
        w = _write_csv_header(f, "eval", cfg, columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])
    if cfg.scenario == "intersection":
        ok = sum(r["outcome"] == "goal" for r in rows)
        print(f"success rate {ok}/{len(rows)} = {ok / max(1, len(rows)):.3f}")
    else:
        for k in sorted({r["agent"] for r in rows}):
            mine = [r for r in rows if r["agent"] == k]
            best = min((r["best_lap"] for r in mine if not math.isnan(r["best_lap"])), default=math.nan)
            print(f"agent {k}: collision-free laps {sum(r['laps'] for r in mine)}, "
                  f"collisions {sum(r['collisions'] for r in mine)}, best lap {best:.2f} s")
    print(f"wrote {out_csv}")
    return EXIT_OK


# --------------------------------------------------------------------------
# replay
# --------------------------------------------------------------------------


def cmd_replay(args) -> int:
    header, records, _ = read_replay(args.log)
    if header is None:
        print(f"{args.log}: empty log, nothing to replay")
        return EXIT_OK
    check_compatible(header)
    cfg = _config_from_header(header)
    env = make_env(cfg)
    report = resimulate(header, records, env)
    if report.diverged:
        print(f"{args.log}:{report.line}: divergence at step {report.first_divergence}: {report.detail}")
        return EXIT_REPLAY_DIVERGED
    print(f"replayed {report.steps} steps, max state error {report.max_error:.3e}: identical")
    return EXIT_OK


def _config_from_header(header: dict) -> RunConfig:
    from .config import parse_config
    import yaml

    conf = dict(header.get("config") or {})
    if not conf:
        raise ReplayError("log header carries no configuration")
    # the recorded configuration is re-validated through the normal loader
    return parse_config(yaml.safe_dump(conf), "<replay header>")


# --------------------------------------------------------------------------
# map-convert / demo-record
# --------------------------------------------------------------------------


def cmd_map_convert(args) -> int:
    grid = load_occupancy_grid(args.image, args.meta)
    walls = contours(grid_to_segments(grid).walls)
    track = track_from_grid(grid, n_gates=args.auto_gates)
    out = args.out or os.path.splitext(args.image)[0] + ".track"
    save_track(track, out)
    print(f"{args.image}: {len(walls)} wall loop(s), {track.n_gates} gates "
          f"({track.labels[0]}..{track.labels[-1]}); wrote {out}")
    return EXIT_OK


def cmd_demo_record(args) -> int:
    cfg = _load_run_config(args)
    if cfg.scenario != "race":
        raise CliError("demo-record needs a race configuration (scenario: race)")
    track = load_track(cfg.track) if cfg.track else bundled_track()
    os.makedirs(cfg.out, exist_ok=True)
    if args.laps == 0:
        print("warning: --laps 0 records empty demonstration files", file=sys.stderr)
    for k in range(cfg.race.n_agents):
        seed = _episode_seed(cfg.seed, k)
        demos = record_demos(args.laps, seed=seed, start_slot=cfg.race.slots()[k], env_config=cfg.race,
                             track=track, params=cfg.vehicle_params())
        path = os.path.join(cfg.out, f"demos_agent{k}.bin")
        save_demos(path, demos, _stamp(cfg))
        times = ", ".join(f"{t:.2f}" for t in demos.metadata["lap_times"])
        print(f"agent {k}: {len(demos)} samples, {demos.n_episodes} lap(s) [{times}] -> {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marl-drive", description="Multi-agent driving simulator and learner.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory (overrides the config's 'out')"):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("train", help="train policies with PPO (plus imitation / curiosity terms if configured)")
    common(sp)
    sp.add_argument("--quiet", action="store_true", help="no per-update progress lines")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="run greedy policies from a checkpoint")
    common(sp)
    sp.add_argument("--episodes", type=_positive_int, default=10)
    sp.add_argument("--checkpoint", help="checkpoint file (default: the config's, else <out>/checkpoint.bin)")
    sp.add_argument("--replay", help="also write a replay log to this path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("replay", help="re-simulate a replay log and check it matches")
    sp.add_argument("log")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("map-convert", help="PGM occupancy image -> track file")
    sp.add_argument("image")
    sp.add_argument("--meta", help="metadata file (default: image path with .meta suffix)")
    sp.add_argument("--auto-gates", type=_positive_int, default=19, help="number of evenly spaced gates")
    sp.add_argument("--out", help="track file to write (default: image path with .track suffix)")
    sp.set_defaults(func=cmd_map_convert)

    sp = sub.add_parser("demo-record", help="record scripted-driver laps for each race car")
    common(sp)
    sp.add_argument("--laps", type=_non_negative_int, default=5)
    sp.set_defaults(func=cmd_demo_record)
    return p


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigFileError, MapParseError, NotATrack, CheckpointError, DemoFileError, DemoFailure, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
