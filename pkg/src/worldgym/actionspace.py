"""Cross-morphology action normalization and chunk utilities.

Different arms produce different action statistics for the same behavior, so
actions are aligned to a reference morphology by mapping each dimension's
(p10, p90) band onto the reference band with an affine map. Values outside
the band extrapolate along the same line (no clipping), preserving extreme
commands such as single-axis control sweeps. The gripper dimension is a
binary command and passes through unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import WorldGymError

REFERENCE_MORPHOLOGY = "arm_a"


class NormalizationError(WorldGymError):
    pass


@dataclass
class NormStats:
    """Per-dimension percentile bands for a source and the reference morphology."""

    src_p10: np.ndarray
    src_p90: np.ndarray
    ref_p10: np.ndarray
    ref_p90: np.ndarray
    gripper_dim: int | None = None  # passes through unchanged
    identity_dims: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.src_p10 = np.asarray(self.src_p10, dtype=np.float64)
        self.src_p90 = np.asarray(self.src_p90, dtype=np.float64)
        self.ref_p10 = np.asarray(self.ref_p10, dtype=np.float64)
        self.ref_p90 = np.asarray(self.ref_p90, dtype=np.float64)
        for d in range(self.dim):
            if d in self.identity_dims or d == self.gripper_dim:
                continue
            if self.src_p90[d] <= self.src_p10[d] or self.ref_p90[d] <= self.ref_p10[d]:
                raise NormalizationError(
                    f"degenerate percentile band on dimension {d} without identity flag")

    @property
    def dim(self) -> int:
        return self.src_p10.shape[0]

    @classmethod
    def from_manifest(cls, action_stats: dict, morphology: str,
                      reference: str = REFERENCE_MORPHOLOGY,
                      gripper_dim: int | None = None) -> "NormStats":
        if morphology not in action_stats:
            raise NormalizationError(f"no action stats for morphology {morphology!r}")
        if reference not in action_stats:
            raise NormalizationError(f"no action stats for reference {reference!r}")
        src, ref = action_stats[morphology], action_stats[reference]
        identity = {
            i for i, (a, b) in enumerate(zip(src.get("degenerate", []), ref.get("degenerate", [])))
            if a or b
        }
        if gripper_dim is None:
            gripper_dim = len(src["p10"]) - 1
        return cls(src_p10=src["p10"], src_p90=src["p90"],
                   ref_p10=ref["p10"], ref_p90=ref["p90"],
                   gripper_dim=gripper_dim, identity_dims=frozenset(identity))

    @classmethod
    def identity(cls, dim: int, gripper_dim: int | None = None) -> "NormStats":
        z, o = np.zeros(dim), np.ones(dim)
        return cls(src_p10=z, src_p90=o, ref_p10=z, ref_p90=o,
                   gripper_dim=dim - 1 if gripper_dim is None else gripper_dim)


def _check_finite(action: np.ndarray):
    if not np.all(np.isfinite(action)):
        raise NormalizationError("non-finite action components")


def normalize(action: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map a source-morphology action into the reference band (extrapolating)."""
    a = np.asarray(action, dtype=np.float64)
    _check_finite(a)
    out = a.copy()
    for d in range(stats.dim):
        if d == stats.gripper_dim or d in stats.identity_dims:
            continue
        scale = (stats.ref_p90[d] - stats.ref_p10[d]) / (stats.src_p90[d] - stats.src_p10[d])
        out[..., d] = stats.ref_p10[d] + (a[..., d] - stats.src_p10[d]) * scale
    return out.astype(np.float32)


def denormalize(action: np.ndarray, stats: NormStats) -> np.ndarray:
    """Exact inverse of :func:`normalize`."""
    a = np.asarray(action, dtype=np.float64)
    _check_finite(a)
    out = a.copy()
    for d in range(stats.dim):
        if d == stats.gripper_dim or d in stats.identity_dims:
            continue
        scale = (stats.src_p90[d] - stats.src_p10[d]) / (stats.ref_p90[d] - stats.ref_p10[d])
        out[..., d] = stats.src_p10[d] + (a[..., d] - stats.ref_p10[d]) * scale
    return out.astype(np.float32)


def split_chunks(actions, h: int) -> list:
    """Split a sequence into ceil(n/h) blocks of length h (last may be short)."""
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    n = len(actions)
    n_blocks = math.ceil(n / h)
    return [actions[i * h:(i + 1) * h] for i in range(n_blocks)]
