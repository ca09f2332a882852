"""Axis-aligned box algebra and prompt-jitter transforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("shift_center", "shift_size", "shift_both")


class DegenerateJitterError(RuntimeError):
    """Raised when repeated jitter attempts keep collapsing the box."""


@dataclass(frozen=True)
class BBox:
    """Top-left (x, y) plus width/height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")
        if not all(np.isfinite([self.x, self.y, self.w, self.h])):
            raise ValueError("box coordinates must be finite")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    def as_xywh(self) -> list:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class JitterSpec:
    """Jitter magnitude range and which transform modes may fire.

    Mild prompts use [0, 0.3]; strong (negative) prompts use [0.7, 1.0].
    `u` is drawn uniformly from [scale_lo, scale_hi] once per jitter and
    applied as a fraction of box width/height (shift) or a per-side
    multiplicative perturbation 1 +/- u (scale).
    """

    scale_lo: float
    scale_hi: float
    modes: tuple = field(default=MODES)

    def __post_init__(self):
        if not (0 <= self.scale_lo <= self.scale_hi <= 1):
            raise ValueError("need 0 <= scale_lo <= scale_hi <= 1")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown jitter mode {m!r}")


MILD_JITTER = JitterSpec(0.0, 0.3)
STRONG_JITTER = JitterSpec(0.7, 1.0)


def iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    ex = max(a.x2, b.x2) - min(a.x, b.x)
    ey = max(a.y2, b.y2) - min(a.y, b.y)
    enclose = ex * ey
    return inter / union - (enclose - union) / enclose


def shift_box(b: BBox, dx: float, dy: float) -> BBox:
    return BBox(b.x + dx, b.y + dy, b.w, b.h)


def scale_box(b: BBox, fw: float, fh: float) -> BBox:
    """Rescale about the center; factors must stay positive."""
    w, h = b.w * fw, b.h * fh
    return BBox(b.cx - w / 2, b.cy - h / 2, w, h)


def _clip_to_image(b: BBox, image_w: float, image_h: float) -> BBox | None:
    x1 = max(0.0, b.x)
    y1 = max(0.0, b.y)
    x2 = min(float(image_w), b.x2)
    y2 = min(float(image_h), b.y2)
    if x2 - x1 <= 1e-9 or y2 - y1 <= 1e-9:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def jitter_box(g: BBox, spec: JitterSpec, rng: np.random.Generator,
               image_w: float, image_h: float, max_retries: int = 8) -> BBox:
    """One random shift/scale perturbation of g, clipped to image bounds.

    Magnitudes are drawn from U[scale_lo, scale_hi] independently per
    component, with random signs. In shift_both mode the budget is split:
    shift and scale each fire at half magnitude, so a combined transform
    stays comparable in strength to a pure one. Retries with fresh draws
    when clipping collapses the box.
    """
    for _ in range(max_retries + 1):
        mode = spec.modes[int(rng.integers(len(spec.modes)))]
        half = 0.5 if mode == "shift_both" else 1.0
        out = g
        if mode in ("shift_center", "shift_both"):
            ux = float(rng.uniform(spec.scale_lo, spec.scale_hi)) * half
            uy = float(rng.uniform(spec.scale_lo, spec.scale_hi)) * half
            sx = 1.0 if rng.random() < 0.5 else -1.0
            sy = 1.0 if rng.random() < 0.5 else -1.0
            out = shift_box(out, sx * ux * g.w, sy * uy * g.h)
        if mode in ("shift_size", "shift_both"):
            uw = float(rng.uniform(spec.scale_lo, spec.scale_hi)) * half
            uh = float(rng.uniform(spec.scale_lo, spec.scale_hi)) * half
            sw = 1.0 if rng.random() < 0.5 else -1.0
            sh = 1.0 if rng.random() < 0.5 else -1.0
            fw, fh = 1.0 + sw * uw, 1.0 + sh * uh
            if fw <= 1e-6 or fh <= 1e-6:
                continue
            out = scale_box(out, fw, fh)
        clipped = _clip_to_image(out, image_w, image_h)
        if clipped is not None:
            return clipped
    raise DegenerateJitterError(
        f"jitter of {g} with range [{spec.scale_lo},{spec.scale_hi}] kept collapsing"
    )


def to_cxcywh_norm(b: BBox, image_w: float, image_h: float) -> np.ndarray:
    if b.x < -1e-9 or b.y < -1e-9 or b.x2 > image_w + 1e-9 or b.y2 > image_h + 1e-9:
        raise ValueError(f"box {b} not inside {image_w}x{image_h} image")
    return np.array([b.cx / image_w, b.cy / image_h, b.w / image_w, b.h / image_h])


def from_cxcywh_norm(v, image_w: float, image_h: float) -> BBox:
    cx, cy, w, h = (float(t) for t in v)
    return BBox((cx - w / 2) * image_w, (cy - h / 2) * image_h, w * image_w, h * image_h)
