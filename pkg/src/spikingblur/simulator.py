"""Synthetic scenes, exposure blur and event generation.

Scenes are analytic functions of pixel position and time so that ground
truth can be sampled at any timestamp and any spatial scale.  Events follow
the usual log-intensity threshold model: a pixel fires whenever
``ln(L + eps)`` departs from its reference level by at least one threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ConfigError,
    EventStream,
    ExposureWindow,
    Frame,
    FrameSequence,
    canonical_order,
)
from .spikerep import SpikingField

SCENE_KINDS = (
    "moving-bar",
    "linear-gradient-drift",
    "piecewise-constant-blocks",
    "spiking-field-playback",
)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Analytic scene description.

    Parameters
    ----------
    kind : str
        One of :data:`SCENE_KINDS`.
    resolution : (h, w)
    window : ExposureWindow
    velocity : float
        Horizontal speed in pixels per second (bar and gradient scenes).
    bar_width : float
        Bar width in pixels.
    levels : tuple of float
        ``(background, foreground)`` for the bar, ``(left, right)`` for the
        gradient, or the pool of block intensities.
    position : float, optional
        Left edge of the bar at ``t = 0`` in pixels; centred by default.
    block_size, switches, seed : int
        Block scene layout: each block switches level ``switches`` times at
        random instants drawn from ``seed``.
    field : SpikingField, optional
        Field played back by ``spiking-field-playback``.
    """

    kind: str
    resolution: tuple[int, int]
    window: ExposureWindow
    velocity: float = 0.0
    bar_width: float = 8.0
    levels: tuple = (0.0, 1.0)
    position: Optional[float] = None
    block_size: int = 8
    switches: int = 2
    seed: int = 0
    field: Optional[SpikingField] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if not np.isfinite(self.velocity):
            raise ConfigError("scene velocity must be finite")
        if any(not 0.0 <= v <= 1.0 for v in self.levels):
            raise ConfigError("scene intensity levels must lie in [0, 1]")
        if self.kind == "spiking-field-playback":
            if self.field is None:
                raise ConfigError("spiking-field-playback needs a field")
            if self.field.resolution != self.resolution:
                raise ConfigError("played-back field resolution does not match scene")

    @property
    def is_static(self) -> bool:
        if self.kind in ("moving-bar", "linear-gradient-drift"):
            return self.velocity == 0.0
        if self.kind == "piecewise-constant-blocks":
            return self.switches == 0
        return False


@dataclass(frozen=True)
class ThresholdPair:
    """Positive and negative log-intensity contrast thresholds."""

    c_plus: float = 0.2
    c_minus: float = -0.2

    def __post_init__(self):
        if not self.c_plus > 0:
            raise ConfigError("c_plus must be positive")
        if not self.c_minus < 0:
            raise ConfigError("c_minus must be negative")


def _edges(n: int, scale: int) -> np.ndarray:
    # pixel-centre positions measured from the left/top sensor edge, in input pixels
    return (np.arange(n * scale) + 0.5) / scale


def _block_schedule(spec: SceneSpec):
    h, w = spec.resolution
    bs = spec.block_size
    nby, nbx = -(-h // bs), -(-w // bs)
    rng = np.random.default_rng(spec.seed)
    levels = rng.choice(np.array(spec.levels), size=(nby, nbx, spec.switches + 1))
    times = np.sort(
        rng.uniform(spec.window.start, spec.window.end, size=(nby, nbx, spec.switches)),
        axis=-1,
    )
    return levels, times


def scene_values(spec: SceneSpec, times, scale: int = 1) -> np.ndarray:
    """Scene intensities at each of ``times``, shape ``(len(times), h*s, w*s)``."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    spec.window.check(times)
    h, w = spec.resolution
    if scale < 1 or int(scale) != scale:
        raise ValueError("scale must be a positive integer")
    scale = int(scale)
    tt = times[:, None, None]
    if spec.kind == "moving-bar":
        bg, fg = spec.levels[0], spec.levels[-1]
        left0 = 0.5 * (w - spec.bar_width) if spec.position is None else spec.position
        left = left0 + spec.velocity * tt
        ex = _edges(w, scale)[None, None, :]
        inside = (ex >= left) & (ex < left + spec.bar_width)
        row = np.where(inside, fg, bg)
        out = np.broadcast_to(row, (len(times), h * scale, w * scale))
    elif spec.kind == "linear-gradient-drift":
        lo, hi = spec.levels[0], spec.levels[-1]
        ex = _edges(w, scale)[None, None, :]
        row = lo + (hi - lo) * (ex - spec.velocity * tt) / w
        out = np.broadcast_to(np.clip(row, 0.0, 1.0), (len(times), h * scale, w * scale))
    elif spec.kind == "piecewise-constant-blocks":
        levels, switch_times = _block_schedule(spec)
        idx = np.sum(switch_times[None] <= tt[..., None], axis=-1)  # (S, nby, nbx)
        vals = np.take_along_axis(
            np.broadcast_to(levels, idx.shape + levels.shape[-1:]), idx[..., None], -1
        )[..., 0]
        by = (np.floor(_edges(h, scale)).astype(int)) // spec.block_size
        bx = (np.floor(_edges(w, scale)).astype(int)) // spec.block_size
        out = vals[:, by[:, None], bx[None, :]]
    elif spec.kind == "spiking-field-playback":
        if scale != 1:
            raise ValueError("field playback is only defined at the native resolution")
        f = spec.field
        out = np.stack([np.clip(f.values(t), 0.0, 1.0) for t in times])
    else:
        raise ConfigError(f"unknown scene kind {spec.kind!r}")
    return np.array(out, dtype=np.float64)


def sample_scene(spec: SceneSpec, t: float, scale: int = 1) -> Frame:
    """Ground-truth frame at time ``t`` (optionally on an ``s``-times finer grid)."""
    return Frame(scene_values(spec, [t], scale)[0], t)


def sample_video(spec: SceneSpec, timestamps, scale: int = 1) -> FrameSequence:
    return FrameSequence.from_array(scene_values(spec, timestamps, scale), timestamps)


def synthesize_blur(spec: SceneSpec, quadrature_samples: int = 4001, scale: int = 1) -> Frame:
    """Exposure-averaged image ``B = (1/T) * integral of L dt``.

    Uses the trapezoid rule over ``quadrature_samples`` uniform samples, except
    for static scenes (returned exactly) and field playback, whose mean is
    available in closed form.
    """
    if quadrature_samples < 2:
        raise ValueError("quadrature_samples must be at least 2")
    if spec.kind == "spiking-field-playback":
        if scale != 1:
            raise ValueError("field playback is only defined at the native resolution")
        return Frame(spec.field.integral_mean(), 0.0)
    if spec.is_static:
        return Frame(scene_values(spec, [0.0], scale)[0], 0.0)
    times = np.linspace(spec.window.start, spec.window.end, quadrature_samples)
    weights = np.ones(quadrature_samples)
    weights[[0, -1]] = 0.5
    acc = 0.0
    for lo in range(0, quadrature_samples, 512):
        chunk = slice(lo, lo + 512)
        acc = acc + np.tensordot(weights[chunk], scene_values(spec, times[chunk], scale), 1)
    return Frame(acc / (quadrature_samples - 1), 0.0)


def simulate_events(
    spec: SceneSpec,
    thresholds: ThresholdPair = ThresholdPair(),
    epsilon_floor: float = 1e-3,
    time_samples: int = 10001,
    drop_rate: float = 0.0,
    jitter: float = 0.0,
    seed: int = 0,
) -> EventStream:
    """Generate the event stream of ``spec`` by a per-pixel reference-level walk.

    The log signal ``ln(L + epsilon_floor)`` is sampled at ``time_samples``
    uniform instants.  When it departs from the reference level by ``d``,
    ``floor(d / threshold)`` events are emitted, timestamped by linear
    interpolation between the bracketing samples, and the reference moves by
    the emitted count times the threshold.

    ``drop_rate`` and ``jitter`` (seconds, Gaussian) add optional noise.
    """
    if not epsilon_floor > 0:
        raise ValueError("epsilon_floor must be positive")
    if time_samples < 2:
        raise ValueError("time_samples must be at least 2")
    h, w = spec.resolution
    win = spec.window
    cp, cm = thresholds.c_plus, thresholds.c_minus
    times = np.linspace(win.start, win.end, time_samples)
    dt = times[1] - times[0]

    pix_parts, t_parts, p_parts = [], [], []
    ref = prev = None
    for lo in range(0, time_samples, 256):
        chunk_t = times[lo:lo + 256]
        logs = np.log(scene_values(spec, chunk_t).reshape(len(chunk_t), -1) + epsilon_floor)
        for j, cur in enumerate(logs):
            if ref is None:
                ref = cur.copy()
                prev = cur
                continue
            t_prev = chunk_t[j - 1] if j else times[lo - 1]
            d = cur - ref
            for thr, sign in ((cp, 1), (cm, -1)):
                hit = np.flatnonzero(d >= thr) if sign > 0 else np.flatnonzero(d <= thr)
                if not len(hit):
                    continue
                count = np.floor(d[hit] / thr).astype(np.int64)
                keep = count > 0
                hit, count = hit[keep], count[keep]
                if not len(hit):
                    continue
                pix = np.repeat(hit, count)
                starts = np.repeat(np.cumsum(count) - count, count)
                rank = np.arange(len(pix)) - starts + 1
                level = ref[pix] + rank * thr
                span = cur[pix] - prev[pix]
                frac = np.clip((level - prev[pix]) / span, 0.0, 1.0)
                pix_parts.append(pix)
                t_parts.append(t_prev + frac * dt)
                p_parts.append(np.full(len(pix), sign, dtype=np.int8))
                ref[hit] += count * thr
            prev = cur

    if pix_parts:
        pix = np.concatenate(pix_parts)
        t = np.concatenate(t_parts)
        p = np.concatenate(p_parts)
    else:
        pix = np.zeros(0, np.int64)
        t = np.zeros(0)
        p = np.zeros(0, np.int8)

    if drop_rate > 0 or jitter > 0:
        rng = np.random.default_rng(seed)
        if drop_rate > 0:
            keep = rng.random(len(t)) >= drop_rate
            pix, t, p = pix[keep], t[keep], p[keep]
        if jitter > 0:
            t = np.clip(t + rng.normal(0.0, jitter, len(t)), win.start, win.end)
    t = np.clip(t, win.start, win.end)
    x, y = pix % w, pix // w
    order = canonical_order(x, y, t, p)
    return EventStream((h, w), win, x[order], y[order], t[order], p[order])


def final_reference_residual(
    spec: SceneSpec,
    events: EventStream,
    thresholds: ThresholdPair,
    epsilon_floor: float = 1e-3,
) -> np.ndarray:
    """``ln(L(T/2)+eps) - reference`` per pixel after replaying ``events``."""
    start = np.log(scene_values(spec, [spec.window.start])[0] + epsilon_floor)
    end = np.log(scene_values(spec, [spec.window.end])[0] + epsilon_floor)
    h, w = spec.resolution
    pix = events.pixel_index()
    steps = np.where(events.p > 0, thresholds.c_plus, thresholds.c_minus)
    moved = np.bincount(pix, weights=steps, minlength=h * w).reshape(h, w)
    return end - (start + moved)
