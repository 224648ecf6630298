"""Rendering fitted fields into sharp frames, at any timestamp and integer scale."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.ndimage import zoom

from .core import ExposureWindow, Frame, FrameSequence
from .spikerep import (
    KernelField,
    SpikingField,
    keypoints_from_widths,
    normalization_constant,
)

Field = Union[SpikingField, KernelField]


@dataclass(frozen=True)
class RenderRequest:
    """Timestamps to render, output resolution and the clamp flag.

    ``resolution=None`` renders at the field's own resolution.
    """

    timestamps: tuple
    resolution: Optional[tuple[int, int]] = None
    clamp: bool = True

    def __post_init__(self):
        ts = tuple(float(t) for t in np.atleast_1d(self.timestamps))
        if not ts:
            raise ValueError("render request needs at least one timestamp")
        object.__setattr__(self, "timestamps", ts)
        if self.resolution is not None:
            object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))

    @classmethod
    def at_fps(cls, window: ExposureWindow, fps: float, **kw) -> "RenderRequest":
        """``round(fps * T)`` frames at the centres of equal sub-intervals."""
        count = int(round(fps * window.T))
        if count < 1:
            raise ValueError(f"fps {fps} gives no frames over T = {window.T}")
        return cls(tuple(window.uniform_timestamps(count)), **kw)


def _blur(blurry) -> np.ndarray:
    return blurry.data if isinstance(blurry, Frame) else np.asarray(blurry, dtype=np.float64)


def render_frame(field: Field, blurry, t: float, clamp: bool = True) -> Frame:
    """Evaluate every pixel of ``field`` at ``t``; clamp to [0, 1] unless disabled."""
    if isinstance(field, KernelField):
        v = field.values(_blur(blurry), t)
    else:
        v = field.values(t)
    if clamp:
        v = np.clip(v, 0.0, 1.0)
    return Frame(v, t)


def render_video(field: Field, blurry, request: RenderRequest) -> FrameSequence:
    if request.resolution is not None and request.resolution != field.resolution:
        return render_superres(field, blurry, request)
    return FrameSequence(tuple(
        render_frame(field, blurry, t, request.clamp) for t in request.timestamps
    ))


def _scale_of(field: Field, resolution) -> int:
    h, w = field.resolution
    H, W = resolution
    if H % h or W % w or H // h != W // w or H < h:
        raise ValueError(f"output {H}x{W} is not an integer upscale of {h}x{w}")
    return H // h


def bilinear_upscale(values: np.ndarray, s: int) -> np.ndarray:
    """Bilinear upscale of the leading two axes by integer ``s``.

    Output pixel ``x'`` samples source coordinate ``(x' + 0.5) / s - 0.5``.
    Samples beyond the outermost pixel centres are extrapolated linearly
    from the two border pixels, so the upscale is exact for values that are
    affine in position.  A single-pixel axis is replicated.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[:2]

    def axis(n):
        pos = (np.arange(n * s) + 0.5) / s - 0.5
        if n == 1:
            zero = np.zeros(n * s, dtype=int)
            return zero, zero, np.zeros(n * s)
        i0 = np.clip(np.floor(pos).astype(int), 0, n - 2)
        return i0, i0 + 1, pos - i0

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    extra = (None,) * (values.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bot = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def upscale_field(field: SpikingField, blurry, s: int):
    """Interpolated field on the ``s``-times finer grid, with the matching blur.

    Slopes, intercepts and pre-activation widths are interpolated; keypoints
    and ``c`` are recomputed so every output pixel still satisfies the blur
    constraint against the interpolated blurry value.
    """
    if isinstance(field, KernelField):
        raise ValueError("super-resolution is only defined for scalar (k = 1) fields")
    if s < 1 or int(s) != s:
        raise ValueError("scale must be a positive integer")
    B = bilinear_upscale(_blur(blurry), int(s))
    raw = bilinear_upscale(field.raw_widths(), int(s))
    m = bilinear_upscale(field.slopes, int(s))
    b = bilinear_upscale(field.intercepts, int(s))
    kp = keypoints_from_widths(raw, field.window)
    c = normalization_constant(m, b, kp, B, field.window)
    return SpikingField(field.window, kp, m, b, c), B


def render_superres(field: SpikingField, blurry, request: RenderRequest) -> FrameSequence:
    """Render at ``request.resolution``, an integer multiple of the field's.

    Scale 1 is the plain render.
    """
    if isinstance(field, KernelField):
        raise ValueError("super-resolution is only defined for scalar (k = 1) fields")
    res = request.resolution or field.resolution
    s = _scale_of(field, res)
    if s == 1:
        return FrameSequence(tuple(
            render_frame(field, blurry, t, request.clamp) for t in request.timestamps
        ))
    fine, _ = upscale_field(field, blurry, s)
    return FrameSequence(tuple(
        render_frame(fine, None, t, request.clamp) for t in request.timestamps
    ))


def bicubic_upscale(frames: FrameSequence, s: int, clamp: bool = True) -> FrameSequence:
    """Cubic-spline upscale of each frame by ``s`` (half-pixel centres, edge extension)."""
    out = []
    for f in frames:
        v = zoom(f.data, s, order=3, mode="nearest", grid_mode=True)
        out.append(Frame(np.clip(v, 0.0, 1.0) if clamp else v, f.t))
    return FrameSequence(tuple(out))
