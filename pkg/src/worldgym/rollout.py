"""Policy rollouts against either the learned world model or the real env.

The loop interleaves policy action-chunk prediction with block-parallel frame
generation: the policy sees only the latest frame, emits a chunk, the chunk is
split into horizon-sized blocks, and each block is generated conditioned on a
sliding window of the most recent frames and actions. Running the same loop
with the ground-truth environment in place of the sampler yields the paired
ground-truth measurement with an identical record schema.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import env as envmod
from .actionspace import NormStats, normalize, split_chunks
from .diffusion import SamplerConfig, sample_block
from .env import Goal, WorldGymError
from .model import WorldModel
from .policies import Policy


class RolloutError(WorldGymError):
    pass


@dataclass
class RolloutConfig:
    n_rollout: int = 40
    horizon: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_rollout < 1 or self.horizon < 1:
            raise RolloutError("n_rollout and horizon must be >= 1")


@dataclass
class RolloutRecord:
    goal: Goal
    evaluator: str  # "env" | "world_model"
    frames: np.ndarray  # (F+1, H, W, 3)
    actions: np.ndarray  # (F, K)
    block_times: list[float] = field(default_factory=list)
    invocations: int = 0
    reward: object = None
    seed: int = 0
    meta: dict = field(default_factory=dict)
    max_window: int = 0

    def __post_init__(self):
        if len(self.frames) != len(self.actions) + 1:
            raise RolloutError("len(frames) must equal len(actions) + 1")


class WorldModelWorld:
    """Sliding-window autoregressive frame generator around a trained model."""

    evaluator = "world_model"

    def __init__(self, model: WorldModel, stats: NormStats, sampler: SamplerConfig,
                 seed: int = 0):
        self.model = model
        self.stats = stats
        self.sampler = sampler
        self.generator = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
        self.invocations = 0
        self.max_window = 0
        self._frames: list[torch.Tensor] = []
        self._actions: list[torch.Tensor] = []
        self._null: list[bool] = []

    def start(self, o0: np.ndarray) -> None:
        k = self.model.config.action_dim
        self._frames = [torch.from_numpy(np.asarray(o0, dtype=np.float32))]
        self._actions = [torch.zeros(k)]  # placeholder under the null flag
        self._null = [True]

    def generate_block(self, raw_actions: np.ndarray) -> list[np.ndarray]:
        """Generate len(raw_actions) frames; actions are in the policy's raw space."""
        norm = normalize(np.asarray(raw_actions, dtype=np.float32), self.stats)
        block = torch.from_numpy(np.asarray(norm, dtype=np.float32))
        tb = block.shape[0]
        ctx_len = min(len(self._frames), self.model.config.context_frames - tb)
        if ctx_len < 0:
            raise RolloutError(f"block of {tb} frames exceeds window capacity")
        ctx_frames = torch.stack(self._frames[-ctx_len:]) if ctx_len else \
            torch.zeros((0,) + self._frames[0].shape)
        ctx_actions = torch.stack(self._actions[-ctx_len:]) if ctx_len else \
            torch.zeros((0, block.shape[1]))
        ctx_null = torch.tensor(self._null[-ctx_len:], dtype=torch.bool) if ctx_len else \
            torch.zeros(0, dtype=torch.bool)
        self.max_window = max(self.max_window, ctx_len + tb)
        frames, calls = sample_block(self.model, ctx_frames, ctx_actions, ctx_null,
                                     block, self.sampler, self.generator)
        self.invocations += calls
        out = []
        for i in range(tb):
            self._frames.append(frames[i])
            self._actions.append(block[i])
            self._null.append(False)
            out.append(frames[i].numpy())
        return out


class EnvWorld:
    """The ground-truth environment behind the same block interface."""

    evaluator = "env"

    def __init__(self, state: envmod.SceneState):
        self.state = state
        self.invocations = 0
        self.max_window = 0

    def start(self, o0: np.ndarray) -> None:
        pass  # state was provided at construction

    def generate_block(self, raw_actions: np.ndarray) -> list[np.ndarray]:
        out = []
        for a in np.asarray(raw_actions):
            self.state = envmod.step(self.state, a)
            out.append(envmod.render(self.state))
        return out


def run_episode(world, policy: Policy, reward_fn, o0: np.ndarray, goal: Goal,
                cfg: RolloutConfig, meta: dict | None = None) -> RolloutRecord:
    """Roll a policy for cfg.n_rollout frames and score the frame sequence.

    The final partial chunk at the rollout boundary is truncated, never
    padded. reward_fn(frames, goal) may be None to skip scoring.
    """
    world.start(o0)
    frames = [np.asarray(o0, dtype=np.float32)]
    actions: list[np.ndarray] = []
    block_times: list[float] = []
    n = 0
    while n < cfg.n_rollout:
        chunk = np.asarray(policy.act(frames[-1], goal))
        if chunk.ndim != 2:
            raise RolloutError(f"policy must return a 2D action chunk, got {chunk.shape}")
        chunk = chunk[: cfg.n_rollout - n]
        for block in split_chunks(chunk, cfg.horizon):
            t0 = time.perf_counter()
            frames.extend(world.generate_block(block))
            block_times.append(time.perf_counter() - t0)
        actions.extend(chunk)
        n += len(chunk)

    record = RolloutRecord(
        goal=goal,
        evaluator=world.evaluator,
        frames=np.stack(frames),
        actions=np.stack(actions) if actions else np.zeros((0, policy.action_dim), np.float32),
        block_times=block_times,
        invocations=world.invocations,
        seed=cfg.seed,
        meta=meta or {},
        max_window=world.max_window,
    )
    if reward_fn is not None:
        record.reward = reward_fn(record.frames, goal)
    return record


class _ConstantAxisPolicy(Policy):
    def __init__(self, axis: int, magnitude: float, action_dim: int, chunk_size: int):
        super().__init__(chunk_size, action_dim)
        if not 0 <= axis < action_dim:
            raise RolloutError(f"axis {axis} out of range for action dim {action_dim}")
        self.axis = axis
        self.magnitude = magnitude

    def act(self, frame, goal):
        chunk = np.zeros((self.chunk_size, self.action_dim), dtype=np.float32)
        chunk[:, self.axis] = self.magnitude
        self._step += self.chunk_size
        return chunk


def control_sweep(world, o0: np.ndarray, goal: Goal, axis: int, magnitude: float,
                  n_steps: int, horizon: int = 4, action_dim: int = 3,
                  seed: int = 0) -> RolloutRecord:
    """Probe one action dimension with a constant command, others zero."""
    policy = _ConstantAxisPolicy(axis, magnitude, action_dim, chunk_size=horizon)
    policy.reset(seed=seed)
    cfg = RolloutConfig(n_rollout=n_steps, horizon=horizon, seed=seed)
    rec = run_episode(world, policy, None, o0, goal, cfg,
                      meta={"sweep_axis": axis, "sweep_magnitude": magnitude})
    return rec


def replay_actions(world, o0: np.ndarray, goal: Goal, actions: np.ndarray,
                   horizon: int = 4, seed: int = 0) -> RolloutRecord:
    """Generate frames conditioned on a logged action sequence (no policy)."""
    actions = np.asarray(actions, dtype=np.float32)
    if not np.all(np.isfinite(actions)):
        raise RolloutError("non-finite replay actions")
    world.start(o0)
    frames = [np.asarray(o0, dtype=np.float32)]
    block_times = []
    for block in split_chunks(actions, horizon) if len(actions) else []:
        t0 = time.perf_counter()
        frames.extend(world.generate_block(block))
        block_times.append(time.perf_counter() - t0)
    return RolloutRecord(
        goal=goal,
        evaluator=world.evaluator,
        frames=np.stack(frames),
        actions=actions.reshape(len(actions), -1) if len(actions) else np.zeros((0, 3), np.float32),
        block_times=block_times,
        invocations=world.invocations,
        seed=seed,
        meta={"replay": True},
        max_window=world.max_window,
    )
