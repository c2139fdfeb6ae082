"""Axis-aligned box arithmetic, relative-motion coordinates, and patch cropping.

Boxes live in continuous pixel coordinates (x, y = top-left corner; w, h in
pixels, no integer snapping) so that the motion maps below invert each other
exactly. Everything here is pure and float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

# Normalized boxes never get thinner than this, in pixels.
MIN_SIDE = 1.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle: top-left corner plus width and height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidInputError(f"box field {name} is not finite: {v!r}")
            object.__setattr__(self, name, v)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def center_distance(self, other: "Box") -> float:
        return float(np.hypot(self.cx - other.cx, self.cy - other.cy))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Box":
        x, y, w, h = (float(v) for v in a)
        return cls(x, y, w, h)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area of two boxes.

    Raises:
        InvalidInputError: if either box has non-positive width or height.
    """
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        raise InvalidInputError("iou of a degenerate box (non-positive side)")
    if a == b:  # (x+w)-x cancellation would spoil the exact self-overlap
        return 1.0
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return min(1.0, inter / (a.area + b.area - inter))


def apply_action(action: Sequence[float], prev: Box) -> Box:
    """Turn a relative motion (dx, dy, dw, dh) anchored at ``prev`` into a box.

    Offsets are measured in units of the previous box size: the center moves
    by (dx*w', dy*h') and the sides grow by (dw*w', dh*h'). Width and height
    are clamped from below at MIN_SIDE; action components are expected in
    [-1, 1] but are not checked here.
    """
    dx, dy, dw, dh = (float(v) for v in action)
    w = max(prev.w + dw * prev.w, MIN_SIDE)
    h = max(prev.h + dh * prev.h, MIN_SIDE)
    cx = prev.cx + dx * prev.w
    cy = prev.cy + dy * prev.h
    return Box(cx - w / 2.0, cy - h / 2.0, w, h)


def infer_action(target: Box, prev: Box) -> np.ndarray:
    """Relative motion that would move ``prev`` onto ``target``, clamped to [-1, 1]^4.

    Inverse of :func:`apply_action` whenever the true offsets fit in the clamp
    range and no side hits the MIN_SIDE floor.
    """
    if prev.w <= 0 or prev.h <= 0:
        raise InvalidInputError("anchor box has non-positive side")
    a = np.array(
        [
            (target.cx - prev.cx) / prev.w,
            (target.cy - prev.cy) / prev.h,
            (target.w - prev.w) / prev.w,
            (target.h - prev.h) / prev.h,
        ],
        dtype=np.float64,
    )
    return np.clip(a, -1.0, 1.0)


def context_region(box: Box, context: float) -> Box:
    """Square region centered on ``box`` whose side is context * sqrt(w * h)."""
    if context <= 0:
        raise InvalidInputError(f"context factor must be positive, got {context}")
    if box.w <= 0 or box.h <= 0:
        raise InvalidInputError("context region of a degenerate box")
    side = context * float(np.sqrt(box.w * box.h))
    return Box(box.cx - side / 2.0, box.cy - side / 2.0, side, side)


def crop_patch(frame: np.ndarray, region: Box, out_size: Tuple[int, int]) -> np.ndarray:
    """Resample ``region`` of an (H, W, 3) frame to (out_h, out_w, 3) float64.

    Bilinear sampling on pixel centers: output pixel (i, j) reads the source
    point region.origin + ((j, i) + 0.5) * region.size / out_size - 0.5.
    Samples outside the frame are zero. Input may be uint8 or float; values
    pass through unscaled (a uint8 frame yields a patch in [0, 255]).
    """
    ow, oh = int(out_size[0]), int(out_size[1])
    if ow <= 0 or oh <= 0:
        raise InvalidInputError(f"non-positive patch size {out_size!r}")
    if region.w <= 0 or region.h <= 0:
        raise InvalidInputError("crop region has zero or negative area")
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidInputError(f"frame must be (H, W, 3), got shape {frame.shape}")
    fh, fw = frame.shape[0], frame.shape[1]
    src = frame.astype(np.float64, copy=False)

    xs = region.x + (np.arange(ow, dtype=np.float64) + 0.5) * (region.w / ow) - 0.5
    ys = region.y + (np.arange(oh, dtype=np.float64) + 0.5) * (region.h / oh) - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def gather(yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        # Zero-fill outside the frame; clip only to keep the fancy index legal.
        vy = (yi >= 0) & (yi < fh)
        vx = (xi >= 0) & (xi < fw)
        yc = np.clip(yi, 0, fh - 1)
        xc = np.clip(xi, 0, fw - 1)
        vals = src[np.ix_(yc, xc)]
        return vals * np.outer(vy, vx)[:, :, None]

    p00 = gather(y0, x0)
    p01 = gather(y0, x0 + 1)
    p10 = gather(y0 + 1, x0)
    p11 = gather(y0 + 1, x0 + 1)
    wx = fx[None, :, None]
    wy = fy[:, None, None]
    patch = (
        p00 * (1.0 - wy) * (1.0 - wx)
        + p01 * (1.0 - wy) * wx
        + p10 * wy * (1.0 - wx)
        + p11 * wy * wx
    )
    return patch
