"""Palette definitions and pixel-space blob tracking.

Every entity the renderer draws uses a color from a fixed, well-separated
palette, so frames can be decoded by nearest-palette-color classification.
The scripted policies, the pixel reward detector, and the control-sweep
tracker all share the helpers in this module, which keeps their notion of
"where things are" consistent with the renderer.

Positions returned by trackers are in world units (the unit square, x right,
y up); pixel row 0 is the top of the frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Canonical palette. Object colors must stay well separated from each other
# and from the marker/overlay colors so nearest-color classification is
# unambiguous even on imperfect generated frames.
PALETTE: dict[str, tuple[float, float, float]] = {
    "background": (0.00, 0.00, 0.00),
    "goal": (0.55, 0.55, 0.55),
    "facade_frame": (0.30, 0.30, 0.30),
    "ee_open": (1.00, 1.00, 1.00),
    "ee_closed": (0.05, 0.90, 0.95),
    "red": (0.85, 0.08, 0.08),
    "green": (0.05, 0.72, 0.10),
    "blue": (0.10, 0.25, 0.95),
    "yellow": (0.95, 0.85, 0.05),
    "magenta": (0.82, 0.05, 0.80),
}

OBJECT_COLOR_NAMES = ("red", "green", "blue", "yellow", "magenta")

_NAMES = list(PALETTE)
_COLORS = np.array([PALETTE[n] for n in _NAMES], dtype=np.float64)


def color_of(name: str) -> tuple[float, float, float]:
    if name not in PALETTE:
        raise KeyError(f"unknown palette color {name!r}")
    return PALETTE[name]


def name_of(rgb) -> str:
    """Nearest palette name for an RGB triple."""
    d = np.sum((_COLORS - np.asarray(rgb, dtype=np.float64)) ** 2, axis=1)
    return _NAMES[int(np.argmin(d))]


def classify(frame: np.ndarray) -> np.ndarray:
    """Classify each pixel to its nearest palette color.

    Returns an (H, W) int array of indices into the palette order.
    """
    f = np.asarray(frame, dtype=np.float64)
    d = np.sum((f[:, :, None, :] - _COLORS[None, None, :, :]) ** 2, axis=-1)
    return np.argmin(d, axis=-1)


def class_mask(labels: np.ndarray, name: str) -> np.ndarray:
    return labels == _NAMES.index(name)


def _centroid_world(mask: np.ndarray) -> np.ndarray | None:
    if not mask.any():
        return None
    rows, cols = np.nonzero(mask)
    h, w = mask.shape
    x = (cols.mean() + 0.5) / w
    y = 1.0 - (rows.mean() + 0.5) / h
    return np.array([x, y])


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of a boolean mask (empty mask in, empty out)."""
    if not mask.any():
        return mask
    lab, n = ndimage.label(mask)
    sizes = ndimage.sum_labels(mask, lab, index=np.arange(1, n + 1))
    return lab == (1 + int(np.argmax(sizes)))


@dataclass
class BlobInfo:
    pos: np.ndarray  # world units
    n_pixels: int


def find_color_blob(frame: np.ndarray, color_name: str, min_pixels: int = 2) -> BlobInfo | None:
    """Centroid of the largest blob of the given palette color, or None."""
    labels = classify(frame)
    mask = largest_component(class_mask(labels, color_name))
    n = int(mask.sum())
    if n < min_pixels:
        return None
    return BlobInfo(pos=_centroid_world(mask), n_pixels=n)


@dataclass
class EEInfo:
    pos: np.ndarray  # world units
    closed: bool
    n_pixels: int


def find_ee(frame: np.ndarray, min_pixels: int = 2) -> EEInfo | None:
    """Locate the end-effector marker; gripper state from its color."""
    labels = classify(frame)
    m_open = class_mask(labels, "ee_open")
    m_closed = class_mask(labels, "ee_closed")
    mask = m_open | m_closed
    n = int(mask.sum())
    if n < min_pixels:
        return None
    return EEInfo(
        pos=_centroid_world(mask),
        closed=int(m_closed.sum()) > int(m_open.sum()),
        n_pixels=n,
    )


def find_goal_region(frame: np.ndarray, min_pixels: int = 4) -> np.ndarray | None:
    """Centroid of the goal-region outline, or None if it is not visible."""
    labels = classify(frame)
    mask = class_mask(labels, "goal")
    if int(mask.sum()) < min_pixels:
        return None
    return _centroid_world(mask)
