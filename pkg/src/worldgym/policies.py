"""Scripted manipulation policies of graded quality.

The expert is a proportional controller driven entirely by the pixel-space
blob tracker in :mod:`worldgym.vision`, so the identical policy object runs
on ground-truth renders and on generated world-model frames. Noisy variants
add Gaussian noise to the planar command; the random policy samples uniform
actions. Policies emit fixed-size action chunks planned open-loop from the
single latest frame, simulating their own kinematics for the within-chunk
steps.
"""
from __future__ import annotations

import numpy as np

from . import vision
from .env import GAINS, GOAL_HALF, Goal, Kind, WorldGymError

POLICY_KINDS = ("expert", "noisy", "random")

# controller constants, in world units
KV = 0.4            # fraction of the remaining error covered per step
CRUISE = 0.032      # max end-effector world speed per step, any morphology
GRASP_TRIGGER = 0.045
CARRY_EPS = 0.10
RELEASE_MARGIN = 0.025
TOUCH_STOP = 0.05
RETREAT_SPEED = 0.030


class PolicyError(WorldGymError):
    pass


class Policy:
    """Maps the latest frame (plus goal) to a chunk of actions."""

    def __init__(self, chunk_size: int, action_dim: int = 3):
        if chunk_size < 1:
            raise PolicyError("chunk_size must be >= 1")
        self.chunk_size = int(chunk_size)
        self.action_dim = int(action_dim)
        self._step = 0

    def reset(self, seed: int = 0, morphology: str = "arm_a") -> None:
        self._step = 0
        self.morphology = morphology
        self._rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0x9E37]))

    def act(self, frame: np.ndarray, goal: Goal) -> np.ndarray:
        raise NotImplementedError

    def _pack(self, dx: float, dy: float, grip: float) -> np.ndarray:
        a = np.zeros(self.action_dim, dtype=np.float32)
        a[0], a[1], a[-1] = dx, dy, grip
        return a


class RandomPolicy(Policy):
    def act(self, frame, goal):
        self._step += self.chunk_size
        chunk = np.zeros((self.chunk_size, self.action_dim), dtype=np.float32)
        chunk[:, 0] = self._rng.uniform(-1, 1, self.chunk_size)
        chunk[:, 1] = self._rng.uniform(-1, 1, self.chunk_size)
        chunk[:, -1] = self._rng.uniform(0, 1, self.chunk_size)
        return chunk


class ExpertPolicy(Policy):
    """Approach, grasp, carry, release — from pixels only.

    noise_sigma > 0 perturbs the planar command of every emitted action.
    """

    def __init__(self, chunk_size: int, action_dim: int = 3, noise_sigma: float = 0.0):
        super().__init__(chunk_size, action_dim)
        if noise_sigma < 0:
            raise PolicyError("noise_sigma must be >= 0")
        self.noise_sigma = float(noise_sigma)

    def act(self, frame, goal):
        gain = GAINS[self.morphology]
        ee_info = vision.find_ee(frame)
        target = vision.find_color_blob(frame, goal.params["color"])
        goal_c = vision.find_goal_region(frame)

        # virtual state rolled forward within the chunk
        ee = ee_info.pos.copy() if ee_info is not None else np.array([0.5, 0.5])
        closed = ee_info.closed if ee_info is not None else False
        t_pos = target.pos.copy() if target is not None else None
        carrying = closed and (
            t_pos is None or float(np.linalg.norm(ee - t_pos)) <= CARRY_EPS
        )
        if carrying and t_pos is None:
            t_pos = ee.copy()

        # A grasp that closed on nothing is retried carefully: back off for a
        # full chunk with the gripper open, then re-approach on the next call.
        if closed and not carrying and t_pos is not None and goal.kind is not Kind.TOUCH:
            away = ee - t_pos
            norm = float(np.linalg.norm(away))
            away = away / norm if norm > 1e-6 else np.array([1.0, 0.0])
            vx, vy = self._drive(RETREAT_SPEED * away, gain)
            self._step += self.chunk_size
            return np.stack([
                self._emit(vx, vy, 0.0) for _ in range(self.chunk_size)
            ])

        actions = []

        for _ in range(self.chunk_size):
            dx = dy = 0.0
            grip = 1.0 if closed else 0.0

            if ee_info is None or (t_pos is None and not carrying):
                actions.append(self._emit(0.0, 0.0, grip))
                continue

            if goal.kind is Kind.TOUCH:
                delta = t_pos - ee
                if float(np.linalg.norm(delta)) > TOUCH_STOP:
                    dx, dy = self._drive(KV * delta, gain)
                grip = 0.0
            elif carrying:
                if goal.kind is Kind.LIFT:
                    grip = 1.0  # hold
                else:
                    assert goal_c is not None or True
                    if goal_c is None:
                        grip = 1.0  # goal not visible; keep holding
                    else:
                        delta = goal_c - ee
                        inside = np.max(np.abs(t_pos - goal_c)) <= GOAL_HALF - RELEASE_MARGIN
                        if inside:
                            grip = 0.0  # release in the goal region
                            carrying = False
                        else:
                            dx, dy = self._drive(KV * delta, gain)
                            grip = 1.0
            else:
                delta = t_pos - ee
                dist = float(np.linalg.norm(delta))
                if closed:
                    grip = 0.0  # failed grasp: reopen while re-approaching
                    dx, dy = self._drive(KV * delta, gain)
                elif dist <= GRASP_TRIGGER:
                    grip = 1.0
                else:
                    dx, dy = self._drive(KV * delta, gain)
                    grip = 0.0

            actions.append(self._emit(dx, dy, grip))

            # Advance the virtual state with the clean command: execution
            # noise is not visible to the policy's own intra-chunk plan.
            ee = np.clip(ee + gain * np.array([dx, dy], dtype=np.float64), 0.0, 1.0)
            was_closed = closed
            closed = grip > 0.5
            if closed and not was_closed and t_pos is not None:
                if float(np.linalg.norm(ee - t_pos)) <= GRASP_TRIGGER + 0.02:
                    carrying = True
            if not closed:
                carrying = False
            if carrying and t_pos is not None:
                t_pos = ee.copy()

        self._step += self.chunk_size
        return np.stack(actions)

    def _drive(self, v_world, gain):
        # limit world-space speed, then convert to this arm's command units
        v = np.clip(np.asarray(v_world, dtype=np.float64), -CRUISE, CRUISE)
        return tuple(np.clip(v / gain, -1.0, 1.0))

    def _emit(self, dx, dy, grip):
        if self.noise_sigma > 0:
            dx = float(np.clip(dx + self._rng.normal(0, self.noise_sigma), -1.0, 1.0))
            dy = float(np.clip(dy + self._rng.normal(0, self.noise_sigma), -1.0, 1.0))
        return self._pack(dx, dy, grip)


def scripted_policy(kind: str, noise_sigma: float = 0.0, chunk_size: int = 4,
                    action_dim: int = 3) -> Policy:
    """Build a policy of the requested grade.

    ``expert`` ignores noise_sigma; ``noisy`` is the expert plus Gaussian
    noise on (dx, dy); ``random`` samples uniform actions.
    """
    if kind == "expert":
        return ExpertPolicy(chunk_size, action_dim, noise_sigma=0.0)
    if kind == "noisy":
        return ExpertPolicy(chunk_size, action_dim, noise_sigma=noise_sigma)
    if kind == "random":
        return RandomPolicy(chunk_size, action_dim)
    raise PolicyError(f"unknown policy kind {kind!r}")


def parse_policy_spec(spec: str) -> tuple[str, float]:
    """Parse "expert", "random", or "noisy:SIGMA" into (kind, sigma)."""
    if ":" in spec:
        kind, _, sig = spec.partition(":")
        return kind, float(sig)
    return spec, 0.0


def policy_from_spec(spec: str, chunk_size: int = 4, action_dim: int = 3) -> Policy:
    kind, sigma = parse_policy_spec(spec)
    return scripted_policy(kind, noise_sigma=sigma, chunk_size=chunk_size, action_dim=action_dim)
