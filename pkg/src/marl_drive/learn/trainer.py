"""Multi-agent training loops: one shared policy, or one policy per agent.

Every environment used here follows the same small protocol: ``reset(seed)``
returns one observation row per learning agent, ``step`` takes one action per
learning agent and returns a StepResult, ``actions_from_indices`` converts
policy head indices into environment actions, and ``action_heads`` /
``obs_dim`` / ``n_learners`` describe the spaces.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .demos import DemoDataset
from .gail import Discriminator, gail_step
from .icm import IcmModule, curiosity_step
from .nn import Adam
from .policy import MlpPolicy, bc_loss
from .ppo import PpoConfig, RolloutBuffer, UpdateAborted, ppo_update

log = logging.getLogger("marl_drive.learn")

BASE_COLUMNS = ("step", "agent", "cumulative_reward", "episode_length", "entropy")


class TrainingDiverged(RuntimeError):
    """An update produced non-finite values; the last good state was kept."""


@dataclass(frozen=True)
class TrainConfig:
    ppo: PpoConfig = field(default_factory=PpoConfig)
    updates: int = 200
    seed: int = 0
    reward_weights: tuple = (1.0, 0.0, 0.0)   # extrinsic, GAIL, curiosity
    bc_weight: float = 0.0
    bc_anneal_fraction: float = 0.5           # BC weight reaches 0 after this share of updates; 0 keeps it constant
    aux_steps: int = 8                        # discriminator / curiosity minibatch steps per update
    aux_minibatch: int = 256
    obs_scale: tuple | None = None
    bc_metric_samples: int = 1024             # demo samples scored for the BC-loss channel
    lr_schedule: str = "linear"               # "linear" decays the step size to 0 over the run; or "constant"

    def validate(self) -> None:
        self.ppo.validate()
        if self.updates < 1:
            raise ValueError("updates must be >= 1")
        if len(self.reward_weights) != 3 or min(self.reward_weights) < 0:
            raise ValueError("reward_weights must be three non-negative numbers")
        if self.bc_weight < 0 or not (0.0 <= self.bc_anneal_fraction <= 1.0):
            raise ValueError("bc_weight must be >= 0 and bc_anneal_fraction in [0, 1]")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValueError("lr_schedule must be 'linear' or 'constant'")

    @property
    def uses_demos(self) -> bool:
        return self.bc_weight > 0 or self.reward_weights[1] > 0

    def columns(self) -> tuple:
        """Metric channels logged for this configuration."""
        cols = list(BASE_COLUMNS)
        if self.bc_weight > 0:
            cols.append("bc_loss")
        if self.reward_weights[1] > 0:
            cols.append("gail_reward")
        if self.reward_weights[2] > 0:
            cols.append("curiosity_reward")
        if len(cols) > len(BASE_COLUMNS):
            cols.append("extrinsic_reward")
        return tuple(cols)


@dataclass
class Learner:
    """One parameter set with its optimiser and optional imitation modules."""

    policy: MlpPolicy
    optimizer: Adam
    streams: list                     # learning-agent positions this policy controls
    discriminator: Discriminator | None = None
    icm: IcmModule | None = None
    demos: DemoDataset | None = None
    name: str = "0"


class Trainer:
    """Collects rollouts and applies PPO updates; one ``update()`` per call."""

    def __init__(self, env, config: TrainConfig, shared: bool = True, demos: list | None = None):
        config.validate()
        self.env = env
        self.config = config
        self.shared = shared
        seq = np.random.SeedSequence(config.seed)
        s_env, s_act, s_upd, s_init = seq.spawn(4)
        self._act_rng = np.random.default_rng(s_act)
        self._upd_rng = np.random.default_rng(s_upd)
        self._env_seed = int(s_env.generate_state(1)[0])
        init_seeds = s_init.generate_state(3 * env.n_learners)
        n = env.n_learners
        groups = [list(range(n))] if shared else [[k] for k in range(n)]
        if config.uses_demos:
            if demos is None or len(demos) != len(groups):
                raise ValueError("imitation terms need one demonstration dataset per policy")
        self.learners: list[Learner] = []
        for g, streams in enumerate(groups):
            pol = MlpPolicy(env.obs_dim, env.action_heads, seed=int(init_seeds[3 * g]), obs_scale=config.obs_scale)
            disc = icm = None
            if config.reward_weights[1] > 0:
                disc = Discriminator(env.obs_dim, env.action_heads, seed=int(init_seeds[3 * g + 1]),
                                     obs_scale=config.obs_scale, learning_rate=config.ppo.learning_rate)
            if config.reward_weights[2] > 0:
                icm = IcmModule(env.obs_dim, env.action_heads, seed=int(init_seeds[3 * g + 2]),
                                obs_scale=config.obs_scale, learning_rate=config.ppo.learning_rate)
            self.learners.append(Learner(pol, Adam(pol.n_params, lr=config.ppo.learning_rate), streams, disc, icm,
                                         demos[g] if demos is not None else None,
                                         name="shared" if shared else str(g)))
        self.update_index = 0
        self.total_steps = 0
        self.history: list[dict] = []
        self._obs = env.reset(self._env_seed)
        self._ep_return = np.zeros(n)
        self._ep_length = np.zeros(n, dtype=int)

    # ------------------------------------------------------------------
    def _collect(self):
        env, cfg = self.env, self.config
        H = cfg.ppo.horizon
        heads = len(env.action_heads)
        buffers = [RolloutBuffer(H, len(l.streams), env.obs_dim, heads) for l in self.learners]
        finished = [[] for _ in self.learners]   # (return, length) of completed episodes
        gamma = cfg.ppo.gamma
        for _ in range(H):
            obs = self._obs
            joint = np.zeros((env.n_learners, heads), dtype=np.int64)
            step_data = []
            for l in self.learners:
                a, lp, v = l.policy.act(obs[l.streams], self._act_rng)
                joint[l.streams] = a
                step_data.append((a, lp, v))
            res = env.step(env.actions_from_indices(joint))
            ext = np.asarray(res.rewards["extrinsic"], dtype=float)
            next_obs = np.array(res.obs, dtype=float, copy=True)
            for pos, o in res.final_obs.items():
                next_obs[pos] = o
            self._ep_return += ext
            self._ep_length += 1
            for li, l in enumerate(self.learners):
                a, lp, v = step_data[li]
                rows = l.streams
                bootstrap = np.zeros(len(rows))
                trunc = np.asarray(res.truncated)[rows]
                if trunc.any():
                    _, vt = l.policy.forward(next_obs[rows][trunc])
                    bootstrap[trunc] = gamma * vt
                buffers[li].add(obs[rows], a, lp, v, next_obs[rows], np.asarray(res.dones)[rows], ext[rows], bootstrap)
                for j, pos in enumerate(rows):
                    if res.dones[pos]:
                        finished[li].append((self._ep_return[pos], self._ep_length[pos]))
            for pos in np.nonzero(res.dones)[0]:
                self._ep_return[pos] = 0.0
                self._ep_length[pos] = 0
            self.total_steps += env.n_learners
            self._obs = env.reset() if res.episode_over else res.obs
        return buffers, finished

    def _bc_weight(self) -> float:
        cfg = self.config
        if cfg.bc_anneal_fraction == 0.0:
            return cfg.bc_weight
        span = cfg.bc_anneal_fraction * cfg.updates
        return cfg.bc_weight * max(0.0, 1.0 - self.update_index / span)

    def _learning_rate(self) -> float:
        cfg = self.config
        if cfg.lr_schedule == "constant":
            return cfg.ppo.learning_rate
        return cfg.ppo.learning_rate * (1.0 - self.update_index / cfg.updates)

    def update(self) -> list[dict]:
        """Collect one horizon of experience and update every policy.  Returns
        the metric rows (one per policy) for this update."""
        cfg = self.config
        buffers, finished = self._collect()
        rows = []
        for li, l in enumerate(self.learners):
            buf = buffers[li]
            n = buf.horizon * buf.n_streams
            flat_obs = buf.obs.reshape(n, -1)
            flat_act = buf.actions.reshape(n, -1)
            flat_next = buf.next_obs.reshape(n, -1)
            if l.discriminator is not None:
                buf.rewards["gail"] = l.discriminator.reward(flat_obs, flat_act).reshape(buf.horizon, -1)
            if l.icm is not None:
                buf.rewards["curiosity"] = l.icm.reward(flat_obs, flat_act, flat_next).reshape(buf.horizon, -1)
            for _ in range(cfg.aux_steps if (l.discriminator or l.icm) else 0):
                idx = self._upd_rng.integers(0, n, size=min(cfg.aux_minibatch, n))
                if l.discriminator is not None:
                    d_idx = self._upd_rng.integers(0, len(l.demos), size=len(idx))
                    gail_step(l.discriminator, l.demos.obs[d_idx], l.demos.actions[d_idx], flat_obs[idx], flat_act[idx])
                if l.icm is not None:
                    curiosity_step(l.icm, flat_obs[idx], flat_act[idx], flat_next[idx])
            _, last_v = l.policy.forward(self._obs[l.streams])
            batch = buf.finish(last_v, cfg.ppo.gamma, cfg.ppo.gae_lambda, cfg.reward_weights)
            demos = (l.demos.obs, l.demos.actions) if (l.demos is not None and cfg.bc_weight > 0) else None
            saved = l.policy.params.copy()
            ppo_cfg = replace(cfg.ppo, learning_rate=self._learning_rate())
            l.optimizer.lr = ppo_cfg.learning_rate
            try:
                stats = ppo_update(l.policy, l.optimizer, batch, ppo_cfg, self._upd_rng, demos, self._bc_weight())
            except UpdateAborted as exc:
                raise TrainingDiverged(f"policy {l.name}, update {self.update_index}: {exc}") from exc
            if not np.all(np.isfinite(l.policy.params)):
                l.policy.params[:] = saved
                raise TrainingDiverged(f"policy {l.name}, update {self.update_index}: non-finite parameters")
            rows.append(self._metrics(l, buf, finished[li], stats))
        self.update_index += 1
        self.history.extend(rows)
        return rows

    def _metrics(self, l: Learner, buf: RolloutBuffer, finished, stats) -> dict:
        cols = self.config.columns()
        row = {"step": self.total_steps, "agent": l.name,
               "cumulative_reward": float(np.mean([r for r, _ in finished])) if finished else math.nan,
               "episode_length": float(np.mean([n for _, n in finished])) if finished else math.nan,
               "entropy": stats["entropy"]}
        if "bc_loss" in cols:
            m = min(self.config.bc_metric_samples, len(l.demos))
            row["bc_loss"] = bc_loss(l.policy, l.demos.obs[:m], l.demos.actions[:m])
        if "gail_reward" in cols:
            row["gail_reward"] = float(buf.rewards["gail"].mean())
        if "curiosity_reward" in cols:
            row["curiosity_reward"] = float(buf.rewards["curiosity"].mean())
        if "extrinsic_reward" in cols:
            row["extrinsic_reward"] = float(buf.rewards["extrinsic"].mean())
        log.info("update %d %s", self.update_index, row)
        return row

    def train(self, callback=None) -> list[dict]:
        """Run the remaining updates; ``callback(trainer, rows)`` after each."""
        while self.update_index < self.config.updates:
            rows = self.update()
            if callback is not None:
                callback(self, rows)
        return self.history


def train_shared(env, config: TrainConfig, callback=None):
    """One parameter set for every learning agent; all transitions feed one buffer."""
    trainer = Trainer(env, config, shared=True)
    history = trainer.train(callback)
    return trainer.learners[0].policy, history


def train_individual(env, config: TrainConfig, demos: list | None = None, callback=None):
    """An independent parameter set (and demonstration set) per agent."""
    trainer = Trainer(env, config, shared=False, demos=demos)
    history = trainer.train(callback)
    return [l.policy for l in trainer.learners], history
