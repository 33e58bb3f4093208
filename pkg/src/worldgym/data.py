"""Offline dataset generation, storage, and training-clip sampling.

Dataset directory layout::

    <root>/
      manifest.json
      ep_00000/
        frames.bin    header: 4 x uint32 LE (T+1, H, W, 3), then float32 LE pixels
        actions.bin   header: 2 x uint32 LE (T, K), then float32 LE actions
        meta          JSON text record (task, params, reward, seed, morphology)
      ep_00001/
      ...

Files are immutable after generation. Split assignment is a pure function of
the episode seed (splitmix64(seed) % 10 == 0 -> validation), so regenerating
a dataset never moves episodes across splits.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as envmod
from .env import EpisodeConfig, Goal, WorldGymError, make_goal
from .policies import policy_from_spec

NULL_ACTION_FLAG = True  # clips always carry an explicit null marker at index 0


class DataError(WorldGymError):
    pass


class TruncatedRecordError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


def splitmix64(x: int) -> int:
    """Stable 64-bit hash (splitmix64 finalizer)."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def split_of(episode_seed: int) -> str:
    return "val" if splitmix64(episode_seed) % 10 == 0 else "train"


@dataclass
class Trajectory:
    goal: Goal
    frames: np.ndarray  # (T+1, H, W, 3) float32
    actions: np.ndarray  # (T, K) float32
    terminal_reward: float
    morphology: str
    seed: int

    def __post_init__(self):
        if len(self.frames) != len(self.actions) + 1:
            raise DataError("len(frames) must equal len(actions) + 1")
        if self.terminal_reward not in (0.0, 0.5, 1.0):
            raise DataError(f"terminal_reward must be in {{0, 0.5, 1}}, got {self.terminal_reward}")


@dataclass
class DatasetManifest:
    version: str
    frame_shape: tuple[int, int, int]
    action_dim: int
    n_episodes: int
    generator_seed: int
    split_rule: str
    # per-morphology, per-dimension percentiles over the training split
    action_stats: dict[str, dict[str, list[float]]]
    tasks: list[str] = field(default_factory=list)
    horizon: int = 40

    def to_json(self) -> str:
        d = {
            "version": self.version,
            "frame_shape": list(self.frame_shape),
            "action_dim": self.action_dim,
            "n_episodes": self.n_episodes,
            "generator_seed": self.generator_seed,
            "split_rule": self.split_rule,
            "action_stats": self.action_stats,
            "tasks": self.tasks,
            "horizon": self.horizon,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(
            version=d["version"],
            frame_shape=tuple(d["frame_shape"]),
            action_dim=d["action_dim"],
            n_episodes=d["n_episodes"],
            generator_seed=d["generator_seed"],
            split_rule=d["split_rule"],
            action_stats=d["action_stats"],
            tasks=d.get("tasks", []),
            horizon=d.get("horizon", 40),
        )


def _write_1d_header(f, values):
    f.write(struct.pack("<" + "I" * len(values), *values))


def save_episode(path: Path, traj: Trajectory) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(traj.frames, dtype="<f4")
    actions = np.ascontiguousarray(traj.actions, dtype="<f4")
    with open(path / "frames.bin", "wb") as f:
        _write_1d_header(f, frames.shape)
        f.write(frames.tobytes())
    with open(path / "actions.bin", "wb") as f:
        _write_1d_header(f, actions.shape)
        f.write(actions.tobytes())
    meta = {
        "task_id": traj.goal.task_id,
        "params": traj.goal.params,
        "terminal_reward": traj.terminal_reward,
        "seed": traj.seed,
        "morphology": traj.morphology,
    }
    (path / "meta").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _read_bin(path: Path, n_header: int, what: str):
    raw = path.read_bytes()
    hdr_bytes = 4 * n_header
    if len(raw) < hdr_bytes:
        raise TruncatedRecordError(f"{what}: truncated header in {path}")
    shape = struct.unpack("<" + "I" * n_header, raw[:hdr_bytes])
    expected = int(np.prod(shape)) * 4
    body = raw[hdr_bytes:]
    if len(body) < expected:
        raise TruncatedRecordError(
            f"{what}: truncated record in {path} (need {expected} bytes, have {len(body)})")
    if len(body) > expected:
        raise DataError(f"{what}: trailing bytes in {path}")
    arr = np.frombuffer(body, dtype="<f4").reshape(shape)
    return arr


def load_episode(path: Path, expected_action_dim: int | None = None,
                 expected_frame_shape: tuple[int, int, int] | None = None) -> Trajectory:
    path = Path(path)
    frames = _read_bin(path / "frames.bin", 4, "frames")
    actions = _read_bin(path / "actions.bin", 2, "actions")
    if frames.shape[0] != actions.shape[0] + 1:
        raise ShapeMismatchError(
            f"{path}: {frames.shape[0]} frames vs {actions.shape[0]} actions")
    if expected_action_dim is not None and actions.shape[1] != expected_action_dim:
        raise ShapeMismatchError(
            f"{path}: action dim {actions.shape[1]} != manifest {expected_action_dim}")
    if expected_frame_shape is not None and tuple(frames.shape[1:]) != tuple(expected_frame_shape):
        raise ShapeMismatchError(
            f"{path}: frame shape {frames.shape[1:]} != manifest {expected_frame_shape}")
    meta = json.loads((path / "meta").read_text())
    return Trajectory(
        goal=make_goal(meta["task_id"]),
        frames=np.array(frames),
        actions=np.array(actions),
        terminal_reward=float(meta["terminal_reward"]),
        morphology=meta["morphology"],
        seed=int(meta["seed"]),
    )


def roll_episode(seed: int, task_id: str, morphology: str, policy_spec: str,
                 horizon: int = 40, action_dim: int = 3, chunk_size: int = 4) -> Trajectory:
    """Run one scripted-policy episode in the ground-truth env."""
    state, goal = envmod.reset(seed, task_id, morphology)
    policy = policy_from_spec(policy_spec, chunk_size=chunk_size, action_dim=action_dim)
    policy.reset(seed=splitmix64(seed ^ 0x5EED), morphology=morphology)
    frames = [envmod.render(state)]
    actions = []
    n = 0
    while n < horizon:
        chunk = policy.act(frames[-1], goal)[: horizon - n]
        for a in chunk:
            state = envmod.step(state, a)
            actions.append(np.asarray(a, dtype=np.float32))
            frames.append(envmod.render(state))
            n += 1
    return Trajectory(
        goal=goal,
        frames=np.stack(frames),
        actions=np.stack(actions),
        terminal_reward=float(envmod.oracle_reward(state, goal)),
        morphology=morphology,
        seed=seed,
    )


def compute_action_stats(episodes: list[Trajectory], action_dim: int) -> dict:
    """p10/p90 per dimension per morphology, training episodes only."""
    stats: dict[str, dict[str, list[float]]] = {}
    by_morph: dict[str, list[np.ndarray]] = {}
    for ep in episodes:
        by_morph.setdefault(ep.morphology, []).append(ep.actions)
    for morph, acts in sorted(by_morph.items()):
        a = np.concatenate(acts, axis=0)
        p10 = np.percentile(a, 10, axis=0)
        p90 = np.percentile(a, 90, axis=0)
        stats[morph] = {"p10": [float(v) for v in p10], "p90": [float(v) for v in p90],
                        "degenerate": [bool(hi <= lo) for lo, hi in zip(p10, p90)]}
    return stats


def generate_dataset(n_episodes: int, policy_mix: list[tuple[str, float]], tasks: list[str],
                     seed: int, out_path: Path, horizon: int = 40, action_dim: int = 3,
                     morphologies: tuple[str, ...] = ("arm_a", "arm_b"),
                     chunk_size: int = 4, progress: bool = False) -> DatasetManifest:
    """Roll mixed-quality episodes in the env and write them to disk.

    Deterministic given the seed: episode seeds, task/morphology/policy draws,
    and therefore every byte of output, are reproducible.
    """
    if not tasks:
        raise DataError("tasks must be non-empty")
    if not policy_mix or any(w <= 0 for _, w in policy_mix):
        raise DataError("policy_mix must be non-empty with positive weights")
    out_path = Path(out_path)
    out_path.mkdir(parents=True, exist_ok=True)

    specs = [s for s, _ in policy_mix]
    weights = np.array([w for _, w in policy_mix], dtype=np.float64)
    weights = weights / weights.sum()

    episodes_meta = []
    train_eps: list[Trajectory] = []
    for i in range(n_episodes):
        ep_seed = splitmix64((seed << 20) ^ i) & 0x7FFFFFFFFFFFFFFF
        rng = np.random.default_rng(np.random.SeedSequence([ep_seed, 0xD47A]))
        task = tasks[int(rng.integers(len(tasks)))]
        morph = morphologies[int(rng.integers(len(morphologies)))]
        spec = specs[int(rng.choice(len(specs), p=weights))]
        traj = roll_episode(ep_seed, task, morph, spec, horizon=horizon,
                            action_dim=action_dim, chunk_size=chunk_size)
        ep_dir = out_path / f"ep_{i:05d}"
        save_episode(ep_dir, traj)
        sp = split_of(ep_seed)
        episodes_meta.append((ep_dir.name, sp))
        if sp == "train":
            train_eps.append(traj)
        if progress and (i + 1) % 100 == 0:
            print(f"  generated {i + 1}/{n_episodes} episodes")

    frame_shape = (envmod.FRAME_SIZE, envmod.FRAME_SIZE, 3)
    manifest = DatasetManifest(
        version="1",
        frame_shape=frame_shape,
        action_dim=action_dim,
        n_episodes=n_episodes,
        generator_seed=seed,
        split_rule="splitmix64(episode_seed) % 10 == 0 -> val",
        action_stats=compute_action_stats(train_eps, action_dim),
        tasks=list(tasks),
        horizon=horizon,
    )
    (out_path / "manifest.json").write_text(manifest.to_json())
    return manifest


@dataclass
class TrainingClip:
    frames: np.ndarray  # (L, H, W, 3) float32
    actions: np.ndarray  # (L, K) float32; actions[0] is a zero placeholder
    null_mask: np.ndarray  # (L,) bool; True where the null action applies
    morphology: str


class Dataset:
    """Read-only view over a generated dataset directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        mf = self.root / "manifest.json"
        if not mf.exists():
            raise DataError(f"no manifest.json under {self.root}")
        self.manifest = DatasetManifest.from_json(mf.read_text())
        self.episode_dirs = sorted(p for p in self.root.iterdir()
                                   if p.is_dir() and p.name.startswith("ep_"))
        if len(self.episode_dirs) != self.manifest.n_episodes:
            raise DataError(
                f"{self.root}: manifest says {self.manifest.n_episodes} episodes, "
                f"found {len(self.episode_dirs)}")
        self._splits = []
        for d in self.episode_dirs:
            meta = json.loads((d / "meta").read_text())
            self._splits.append(split_of(int(meta["seed"])))

    def indices(self, split: str | None = None) -> list[int]:
        if split is None:
            return list(range(len(self.episode_dirs)))
        return [i for i, s in enumerate(self._splits) if s == split]

    def load(self, index: int) -> Trajectory:
        return load_episode(self.episode_dirs[index],
                            expected_action_dim=self.manifest.action_dim,
                            expected_frame_shape=self.manifest.frame_shape)

    def morphology(self, index: int) -> str:
        meta = json.loads((self.episode_dirs[index] / "meta").read_text())
        return meta["morphology"]

    def _memmap_frames(self, index: int) -> np.ndarray:
        path = self.episode_dirs[index] / "frames.bin"
        with open(path, "rb") as f:
            shape = struct.unpack("<IIII", f.read(16))
        return np.memmap(path, dtype="<f4", mode="r", offset=16, shape=shape)

    def _memmap_actions(self, index: int) -> np.ndarray:
        path = self.episode_dirs[index] / "actions.bin"
        with open(path, "rb") as f:
            shape = struct.unpack("<II", f.read(8))
        return np.memmap(path, dtype="<f4", mode="r", offset=8, shape=shape)

    def sample_clip(self, rng: np.random.Generator, clip_len: int,
                    eligible: list[int] | None = None) -> TrainingClip:
        """Uniform episode, then uniform valid window; null action at index 0."""
        if eligible is None:
            eligible = self.indices("train")
        n_frames_needed = clip_len
        candidates = eligible
        if not candidates:
            raise DataError("no eligible episodes")
        idx = candidates[int(rng.integers(len(candidates)))]
        frames = self._memmap_frames(idx)
        if frames.shape[0] < n_frames_needed:
            raise DataError(f"episode {idx} shorter than clip length {clip_len}")
        off = int(rng.integers(frames.shape[0] - n_frames_needed + 1))
        actions_all = self._memmap_actions(idx)
        clip_frames = np.array(frames[off:off + clip_len], dtype=np.float32)
        acts = np.zeros((clip_len, actions_all.shape[1]), dtype=np.float32)
        # actions[i] produced frames[i] from frames[i-1]; index 0 has none
        acts[1:] = actions_all[off:off + clip_len - 1]
        null_mask = np.zeros(clip_len, dtype=bool)
        null_mask[0] = True
        return TrainingClip(frames=clip_frames, actions=acts, null_mask=null_mask,
                            morphology=self.morphology(idx))
