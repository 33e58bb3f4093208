"""PushWorld: a deterministic synthetic 2D manipulation environment.

The hidden state is a set of colored objects plus a point end-effector on the
unit square. The end-effector moves by velocity commands, can grasp the
nearest object when the gripper closes near it, and carries it until release.
An episode's task is defined by a language goal bound to color/shape slots;
an oracle reward evaluates the hidden state directly.

All transitions are pure functions over immutable states, fully determined by
(seed, task, morphology, action sequence).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .vision import OBJECT_COLOR_NAMES, PALETTE, color_of, name_of

FRAME_SIZE = 32
GRASP_RADIUS = 0.06
TOUCH_RADIUS = 0.07
GOAL_HALF = 0.09
GAINS = {"arm_a": 0.05, "arm_b": 0.10}
MORPHOLOGIES = tuple(GAINS)
SHAPES = ("square", "circle", "triangle")


class WorldGymError(Exception):
    """Base class for all package errors."""


class TaskError(WorldGymError):
    pass


class ActionError(WorldGymError):
    pass


class Kind(Enum):
    MOVE = "move"
    LIFT = "lift"
    TOUCH = "touch"


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: tuple[float, float, float]
    pos: tuple[float, float]
    size: float  # half-extent, world units
    facade: bool = False

    @property
    def color_name(self) -> str:
        return name_of(self.color)


@dataclass(frozen=True)
class SceneState:
    ee_pos: tuple[float, float]
    gripper: int  # 0 open, 1 closed
    objects: tuple[ObjectSpec, ...]
    held_index: int | None
    goal_region: tuple[float, float, float]  # cx, cy, half-extent
    morphology: str
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class Goal:
    task_id: str
    kind: Kind
    params: dict

    @property
    def instruction(self) -> str:
        return render_instruction(self.kind, self.params)

    @property
    def has_partial(self) -> bool:
        return self.kind is Kind.MOVE

    @property
    def partial_desc(self) -> str:
        if not self.has_partial:
            return ""
        return f"the {self.params['color']} {self.params['shape']} is grasped by the robot"


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 40
    seed: int = 0
    morphology: str = "arm_a"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def render_instruction(kind: Kind, params: dict) -> str:
    if kind is Kind.MOVE:
        return f"move the {params['color']} {params['shape']} to the goal region"
    if kind is Kind.LIFT:
        return f"pick up the {params['color']} {params['shape']}"
    if kind is Kind.TOUCH:
        return f"touch the {params['color']} object"
    raise TaskError(f"unknown task kind {kind}")


def make_goal(task_id: str) -> Goal:
    """Parse a task id like ``move-red-square-to-goal`` into a Goal."""
    parts = task_id.split("-")
    try:
        if parts[0] == "move" and parts[-2:] == ["to", "goal"] and len(parts) == 5:
            kind, params = Kind.MOVE, {"color": parts[1], "shape": parts[2]}
        elif parts[0] == "lift" and len(parts) == 3:
            kind, params = Kind.LIFT, {"color": parts[1], "shape": parts[2]}
        elif parts[0] == "touch" and len(parts) == 2:
            kind, params = Kind.TOUCH, {"color": parts[1]}
        else:
            raise TaskError(f"unknown task id {task_id!r}")
    except IndexError:
        raise TaskError(f"unknown task id {task_id!r}") from None
    if params["color"] not in OBJECT_COLOR_NAMES:
        raise TaskError(f"unknown color {params['color']!r} in task {task_id!r}")
    if "shape" in params and params["shape"] not in SHAPES:
        raise TaskError(f"unknown shape {params['shape']!r} in task {task_id!r}")
    return Goal(task_id=task_id, kind=kind, params=params)


def task_id_for(kind: Kind, params: dict) -> str:
    if kind is Kind.MOVE:
        return f"move-{params['color']}-{params['shape']}-to-goal"
    if kind is Kind.LIFT:
        return f"lift-{params['color']}-{params['shape']}"
    if kind is Kind.TOUCH:
        return f"touch-{params['color']}"
    raise TaskError(f"unknown task kind {kind}")


DEFAULT_TASKS = (
    "move-red-square-to-goal",
    "move-blue-circle-to-goal",
    "move-green-triangle-to-goal",
    "move-yellow-square-to-goal",
    "move-magenta-circle-to-goal",
    "lift-red-square",
    "touch-blue",
)


def _task_rng(seed: int, task_id: str, morphology: str) -> np.random.Generator:
    ent = [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(task_id.encode()), zlib.crc32(morphology.encode())]
    return np.random.default_rng(np.random.SeedSequence(ent))


def reset(seed: int, task_id: str, morphology: str = "arm_a", n_distractors: int = 2) -> tuple[SceneState, Goal]:
    """Deterministically sample an initial scene for a task.

    The target object and goal region never overlap at t=0, object colors are
    unique within a scene, and the end-effector starts clear of every object.
    """
    goal = make_goal(task_id)
    if morphology not in GAINS:
        raise TaskError(f"unknown morphology {morphology!r}")
    rng = _task_rng(seed, task_id, morphology)

    # Goal region near a corner so a long carry is always feasible.
    quad = rng.integers(2, size=2)
    goal_center = np.where(quad == 1, rng.uniform(0.68, 0.83, size=2), rng.uniform(0.17, 0.32, size=2))

    target_color = goal.params["color"]
    target_shape = goal.params.get("shape") or SHAPES[int(rng.integers(len(SHAPES)))]

    def sample_size():
        return float(rng.uniform(0.055, 0.075))

    def sample_pos(size, others, min_goal_dist):
        for _ in range(1000):
            p = rng.uniform(0.08, 0.92, size=2)
            if np.max(np.abs(p - goal_center)) < min_goal_dist + size:
                continue
            if all(np.linalg.norm(p - np.asarray(o.pos)) >= size + o.size + 0.03 for o in others):
                return p
        raise TaskError("could not place object after 1000 attempts")

    objects: list[ObjectSpec] = []
    t_size = sample_size()
    t_pos = None
    # Fixed travel band: carry distance and approach distance vary little, so
    # completion time (and thus sensitivity to wasted steps) is predictable.
    for _ in range(1000):
        p = sample_pos(t_size, objects, GOAL_HALF + 0.05)
        if 0.55 <= np.linalg.norm(p - goal_center) <= 0.70:
            t_pos = p
            break
    if t_pos is None:
        raise TaskError("could not place target object")
    objects.append(ObjectSpec(shape=target_shape, color=color_of(target_color),
                              pos=tuple(t_pos), size=t_size))

    other_colors = [c for c in OBJECT_COLOR_NAMES if c != target_color]
    picks = rng.choice(len(other_colors), size=n_distractors, replace=False)
    for ci in picks:
        size = sample_size()
        pos = sample_pos(size, objects, GOAL_HALF + 0.04)
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        objects.append(ObjectSpec(shape=shape, color=color_of(other_colors[int(ci)]),
                                  pos=tuple(pos), size=size))

    ee = None
    for _ in range(1000):
        p = rng.uniform(0.10, 0.90, size=2)
        if not 0.30 <= np.linalg.norm(p - np.asarray(objects[0].pos)) <= 0.42:
            continue
        if all(np.linalg.norm(p - np.asarray(o.pos)) >= 0.12 for o in objects):
            ee = p
            break
    if ee is None:
        raise TaskError("could not place end-effector")

    state = SceneState(
        ee_pos=tuple(ee),
        gripper=0,
        objects=tuple(objects),
        held_index=None,
        goal_region=(float(goal_center[0]), float(goal_center[1]), GOAL_HALF),
        morphology=morphology,
    )
    return state, goal


def step(state: SceneState, action: np.ndarray) -> SceneState:
    """Advance the scene by one kinematic step.

    Action layout: (dx, dy, ..., grip) with dims 0/1 the planar velocity
    command and the last dim the gripper command (> 0.5 closes). Extra middle
    dims are ignored by the dynamics.
    """
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] < 3:
        raise ActionError(f"action must have at least 3 dims, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ActionError("non-finite action components")

    gain = GAINS[state.morphology]
    lo_x, hi_x, lo_y, hi_y = state.bounds
    ex = float(np.clip(state.ee_pos[0] + gain * a[0], lo_x, hi_x))
    ey = float(np.clip(state.ee_pos[1] + gain * a[1], lo_y, hi_y))
    new_ee = (ex, ey)

    grip_closed = int(a[-1] > 0.5)
    held = state.held_index
    objects = list(state.objects)

    if held is not None:
        objects[held] = replace(objects[held], pos=new_ee)

    if grip_closed and not state.gripper and held is None:
        # grasp on the open->closed transition only
        best, best_d = None, GRASP_RADIUS
        for i, obj in enumerate(objects):
            if obj.facade:
                continue
            d = float(np.hypot(obj.pos[0] - ex, obj.pos[1] - ey))
            if d <= best_d:
                best, best_d = i, d
        if best is not None:
            held = best
            objects[held] = replace(objects[held], pos=new_ee)
    elif not grip_closed and held is not None:
        held = None  # release in place

    return replace(state, ee_pos=new_ee, gripper=grip_closed,
                   objects=tuple(objects), held_index=held)


def _pixel_grid(size: int):
    xs = (np.arange(size) + 0.5) / size
    ys = 1.0 - (np.arange(size) + 0.5) / size
    return np.meshgrid(xs, ys)  # px[r,c], py[r,c]


def _shape_mask(px, py, obj_shape: str, cx: float, cy: float, half: float) -> np.ndarray:
    dx, dy = px - cx, py - cy
    if obj_shape == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if obj_shape == "circle":
        return dx * dx + dy * dy <= half * half
    if obj_shape == "triangle":
        # apex up, base at cy - half
        return (dy >= -half) & (np.abs(dx) <= (half - dy) / 2.0)
    raise TaskError(f"unknown shape {obj_shape!r}")


def render(state: SceneState, size: int = FRAME_SIZE) -> np.ndarray:
    """Rasterize the scene to an (size, size, 3) float32 frame in [0, 1]."""
    px, py = _pixel_grid(size)
    frame = np.zeros((size, size, 3), dtype=np.float64)
    frame[:] = PALETTE["background"]
    half_px = 0.5 / size

    # goal-region outline
    gx, gy, gh = state.goal_region
    cheb = np.maximum(np.abs(px - gx), np.abs(py - gy))
    ring = np.abs(cheb - gh) <= half_px
    frame[ring] = PALETTE["goal"]

    order = [i for i in range(len(state.objects)) if i != state.held_index]
    if state.held_index is not None:
        order.append(state.held_index)
    for i in order:
        obj = state.objects[i]
        cx, cy = obj.pos
        if obj.facade:
            outer = _shape_mask(px, py, "square", cx, cy, obj.size)
            inner = _shape_mask(px, py, "square", cx, cy, obj.size - 2 * half_px)
            frame[outer & ~inner] = PALETTE["facade_frame"]
            pict = _shape_mask(px, py, obj.shape, cx, cy, obj.size * 0.55)
            frame[pict] = obj.color
        else:
            frame[_shape_mask(px, py, obj.shape, cx, cy, obj.size)] = obj.color

    ex, ey = state.ee_pos
    if state.morphology == "arm_b":
        arm, thick = 2.5 / size, half_px + 1e-9
        dx, dy = np.abs(px - ex), np.abs(py - ey)
        marker = ((dx <= thick) & (dy <= arm)) | ((dy <= thick) & (dx <= arm))
    else:
        marker = _shape_mask(px, py, "square", ex, ey, 1.5 / size)
    frame[marker] = PALETTE["ee_closed"] if state.gripper else PALETTE["ee_open"]

    return frame.astype(np.float32)


def _target_index(state: SceneState, goal: Goal) -> int | None:
    color = goal.params["color"]
    shape = goal.params.get("shape")
    for i, obj in enumerate(state.objects):
        if obj.facade:
            continue
        if obj.color_name != color:
            continue
        if shape is not None and obj.shape != shape:
            continue
        return i
    return None


def oracle_reward(state: SceneState, goal: Goal) -> float:
    """Score the hidden state against the goal: 1, 0.5 (partial), or 0."""
    idx = _target_index(state, goal)
    if idx is None:
        return 0.0  # target absent from scene (e.g. after an OOD edit)
    obj = state.objects[idx]
    if goal.kind is Kind.MOVE:
        gx, gy, gh = state.goal_region
        if max(abs(obj.pos[0] - gx), abs(obj.pos[1] - gy)) <= gh:
            return 1.0
        if state.held_index == idx:
            return 0.5
        return 0.0
    if goal.kind is Kind.LIFT:
        return 1.0 if state.held_index == idx else 0.0
    if goal.kind is Kind.TOUCH:
        d = np.hypot(state.ee_pos[0] - obj.pos[0], state.ee_pos[1] - obj.pos[1])
        return 1.0 if d <= TOUCH_RADIUS else 0.0
    raise TaskError(f"unknown task kind {goal.kind}")
