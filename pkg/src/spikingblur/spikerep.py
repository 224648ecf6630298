"""Piecewise-linear per-pixel intensity mappings with a blur-exact offset.

A pixel's latent intensity over the exposure ``[-T/2, T/2]`` is modelled as

    L(t) = c + m_i * t + b_i      for t_i <= t < t_{i+1}

with ``n`` segments whose keypoints ``t_1 = -T/2 < ... < t_{n+1} = T/2`` come
from a softmax over unconstrained raw widths.  The offset ``c`` is solved in
closed form so that the temporal mean of ``L`` equals the blurry pixel value.
Jumps between neighbouring segments are the "spikes".

Array-level functions broadcast over leading axes: keypoints have shape
``(..., n + 1)``, slopes and intercepts ``(..., n)``.  Kernel mode adds two
tap axes, ``(..., k, k, n)``, and shares one keypoint set per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ExposureWindow, Frame

#: Smallest width fraction a segment may receive.  Keeps keypoints strictly
#: increasing in floating point even for raw widths of extreme magnitude.
MIN_WIDTH_FRACTION = 1e-12


def _as_T(window) -> float:
    return window.T if isinstance(window, ExposureWindow) else float(window)


def width_fractions(raw_widths) -> np.ndarray:
    """Softmax of ``raw_widths`` along the last axis, floored at ``MIN_WIDTH_FRACTION``."""
    r = np.asarray(raw_widths, dtype=np.float64)
    e = np.exp(r - r.max(axis=-1, keepdims=True))
    frac = e / e.sum(axis=-1, keepdims=True)
    if np.any(frac < MIN_WIDTH_FRACTION):
        frac = np.maximum(frac, MIN_WIDTH_FRACTION)
        frac = frac / frac.sum(axis=-1, keepdims=True)
    return frac


def keypoints_from_widths(raw_widths, window) -> np.ndarray:
    """Map ``n`` raw widths to ``n + 1`` strictly increasing keypoints.

    Widths are ``T * softmax(raw_widths)``; keypoints are their cumulative sum
    starting at ``-T/2``.  The last keypoint is set to ``T/2`` directly rather
    than accumulated.
    """
    T = _as_T(window)
    w = T * width_fractions(raw_widths)
    kp = np.empty(w.shape[:-1] + (w.shape[-1] + 1,))
    kp[..., 0] = -0.5 * T
    kp[..., 1:] = -0.5 * T + np.cumsum(w, axis=-1)
    kp[..., -1] = 0.5 * T
    return kp


def widths_from_keypoints(keypoints) -> np.ndarray:
    """Raw widths reproducing ``keypoints`` (inverse of the softmax up to a constant)."""
    return np.log(np.diff(np.asarray(keypoints, dtype=np.float64), axis=-1))


def segment_index(keypoints, t) -> np.ndarray:
    """Index of the segment containing ``t``.

    Segments are half-open ``[t_i, t_{i+1})`` except the last, which is closed.
    ``t`` must broadcast against ``keypoints[..., 0]``.
    """
    kp = np.asarray(keypoints, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.sum(kp[..., 1:-1] <= t[..., None], axis=-1)


def _take(values, idx):
    values = np.asarray(values, dtype=np.float64)
    values = np.broadcast_to(values, idx.shape + values.shape[-1:])
    return np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]


def piecewise_value(keypoints, slopes, intercepts, t) -> np.ndarray:
    """``m_i * t + b_i`` on the segment containing ``t`` (no offset)."""
    t = np.asarray(t, dtype=np.float64)
    idx = segment_index(keypoints, t)
    return _take(slopes, idx) * t + _take(intercepts, idx)


def segment_means(keypoints, slopes, intercepts, window) -> np.ndarray:
    """Per-segment contribution to the temporal mean, shape ``(..., n)``.

    ``(1/T) * integral of (m_i t + b_i)`` over ``[t_i, t_{i+1}]``.
    """
    T = _as_T(window)
    kp = np.asarray(keypoints, dtype=np.float64)
    lo, hi = kp[..., :-1], kp[..., 1:]
    # (hi^2 - lo^2)/2 written as width * midpoint to avoid cancellation
    return (hi - lo) * (np.asarray(slopes) * (0.5 * (hi + lo)) + np.asarray(intercepts)) / T


def piecewise_mean(keypoints, slopes, intercepts, window) -> np.ndarray:
    return segment_means(keypoints, slopes, intercepts, window).sum(axis=-1)


def normalization_constant(slopes, intercepts, keypoints, B, window) -> np.ndarray:
    """Offset ``c`` making the temporal mean of the mapping equal ``B``.

    ``c = B - (1/T) * sum_i [ m_i/2 (t_{i+1}^2 - t_i^2) + b_i (t_{i+1} - t_i) ]``
    """
    return np.asarray(B, dtype=np.float64) - piecewise_mean(
        keypoints, slopes, intercepts, window
    )


def _check_keypoints(kp: np.ndarray, T: float) -> None:
    if kp.shape[-1] < 2:
        raise ValueError("need at least two keypoints")
    if np.any(kp[..., 0] != -0.5 * T) or np.any(kp[..., -1] != 0.5 * T):
        raise ValueError("keypoint endpoints must be exactly -T/2 and T/2")
    if np.any(np.diff(kp, axis=-1) <= 0):
        raise ValueError("keypoints must be strictly increasing")


def _readonly(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpikingPixel:
    """One pixel's mapping: ``n + 1`` keypoints, ``n`` slopes/intercepts and ``c``."""

    keypoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        kp = _readonly(self.keypoints).reshape(-1)
        n = len(kp) - 1
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "slopes", _readonly(self.slopes).reshape(-1))
        object.__setattr__(self, "intercepts", _readonly(self.intercepts).reshape(-1))
        object.__setattr__(self, "c", float(self.c))
        if len(self.slopes) != n or len(self.intercepts) != n:
            raise ValueError(f"expected {n} slopes and intercepts for {n + 1} keypoints")
        _check_keypoints(kp, self.T)

    @property
    def n(self) -> int:
        return len(self.slopes)

    @property
    def T(self) -> float:
        return float(self.keypoints[-1] - self.keypoints[0])

    @property
    def window(self) -> ExposureWindow:
        return ExposureWindow(self.T)

    @classmethod
    def with_blur(cls, keypoints, slopes, intercepts, B) -> "SpikingPixel":
        """Pixel whose offset is solved so that its temporal mean equals ``B``."""
        kp = np.asarray(keypoints, dtype=np.float64)
        T = kp[-1] - kp[0]
        return cls(kp, slopes, intercepts, normalization_constant(slopes, intercepts, kp, B, T))

    def __call__(self, t):
        return evaluate(self, t)


def evaluate(pixel: SpikingPixel, t):
    """``c + m_i t + b_i`` on the segment containing ``t``; unclamped."""
    pixel.window.check(t)
    v = pixel.c + piecewise_value(pixel.keypoints, pixel.slopes, pixel.intercepts, t)
    return float(v) if np.ndim(v) == 0 else v


def integral_mean(pixel: SpikingPixel) -> float:
    """Closed-form temporal mean of the full mapping over the exposure."""
    return float(
        pixel.c + piecewise_mean(pixel.keypoints, pixel.slopes, pixel.intercepts, pixel.T)
    )


@dataclass(frozen=True, eq=False)
class SpikingField:
    """An ``h x w`` grid of spiking pixels sharing ``n`` and the exposure window.

    ``keypoints`` has shape ``(h, w, n + 1)``, ``slopes`` and ``intercepts``
    ``(h, w, n)`` and ``c`` ``(h, w)``.
    """

    window: ExposureWindow
    keypoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        kp = _readonly(self.keypoints)
        if kp.ndim != 3:
            raise ValueError("keypoints must have shape (h, w, n + 1)")
        h, w, n1 = kp.shape
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "slopes", _readonly(self.slopes, (h, w, n1 - 1)))
        object.__setattr__(self, "intercepts", _readonly(self.intercepts, (h, w, n1 - 1)))
        object.__setattr__(self, "c", _readonly(self.c, (h, w)))
        _check_keypoints(kp, self.window.T)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.keypoints.shape[:2]

    @property
    def n(self) -> int:
        return self.slopes.shape[-1]

    @property
    def k(self) -> int:
        return 1

    @classmethod
    def from_params(cls, window, raw_widths, slopes, intercepts, blurry) -> "SpikingField":
        """Assemble a field from raw widths, solving every ``c`` against ``blurry``."""
        B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry)
        kp = keypoints_from_widths(raw_widths, window)
        c = normalization_constant(slopes, intercepts, kp, B, window)
        return cls(window, kp, slopes, intercepts, c)

    @classmethod
    def constant(cls, window, values, n: int = 1) -> "SpikingField":
        values = np.asarray(values, dtype=np.float64)
        h, w = values.shape
        kp = keypoints_from_widths(np.zeros((h, w, n)), window)
        zeros = np.zeros((h, w, n))
        return cls(window, kp, zeros, zeros, values)

    def pixel(self, x: int, y: int) -> SpikingPixel:
        return SpikingPixel(
            self.keypoints[y, x], self.slopes[y, x], self.intercepts[y, x], self.c[y, x]
        )

    def raw_widths(self) -> np.ndarray:
        return widths_from_keypoints(self.keypoints)

    def values(self, t: float) -> np.ndarray:
        """Unclamped intensities of every pixel at time ``t``."""
        self.window.check(t)
        return self.c + piecewise_value(self.keypoints, self.slopes, self.intercepts, t)

    def integral_mean(self) -> np.ndarray:
        return self.c + piecewise_mean(
            self.keypoints, self.slopes, self.intercepts, self.window
        )

    def equals(self, other) -> bool:
        return (
            isinstance(other, SpikingField)
            and self.window == other.window
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("keypoints", "slopes", "intercepts", "c")
            )
        )


def neighborhoods(image, k: int) -> np.ndarray:
    """Zero-padded ``k x k`` neighbourhood of every pixel, shape ``(h, w, k, k)``."""
    if k < 1 or k % 2 == 0:
        raise ValueError("kernel size must be an odd positive integer")
    image = np.asarray(image, dtype=np.float64)
    r = k // 2
    padded = np.pad(image, r)
    return np.lib.stride_tricks.sliding_window_view(padded, (k, k))


@dataclass(frozen=True, eq=False)
class KernelField:
    """Per-pixel ``k x k`` kernels of piecewise-linear taps plus one offset per pixel.

    ``keypoints`` is ``(h, w, n + 1)`` (shared by all taps of a pixel), ``slopes``
    and ``intercepts`` are ``(h, w, k, k, n)`` and ``c`` is ``(h, w)``.
    """

    window: ExposureWindow
    keypoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        kp = _readonly(self.keypoints)
        if kp.ndim != 3:
            raise ValueError("keypoints must have shape (h, w, n + 1)")
        h, w, n1 = kp.shape
        slopes = _readonly(self.slopes)
        if slopes.ndim != 5 or slopes.shape[2] != slopes.shape[3]:
            raise ValueError("tap slopes must have shape (h, w, k, k, n)")
        k = slopes.shape[2]
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        shape = (h, w, k, k, n1 - 1)
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "slopes", slopes.reshape(shape))
        object.__setattr__(self, "intercepts", _readonly(self.intercepts, shape))
        object.__setattr__(self, "c", _readonly(self.c, (h, w)))
        _check_keypoints(kp, self.window.T)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.keypoints.shape[:2]

    @property
    def n(self) -> int:
        return self.slopes.shape[-1]

    @property
    def k(self) -> int:
        return self.slopes.shape[2]

    def tap_values(self, t: float) -> np.ndarray:
        """Kernel weights ``K_xy(t)`` of every pixel, shape ``(h, w, k, k)``."""
        self.window.check(t)
        idx = segment_index(self.keypoints, t)
        idx = np.broadcast_to(idx[:, :, None, None], self.slopes.shape[:4])
        return _take(self.slopes, idx) * t + _take(self.intercepts, idx)

    def values(self, blurry, t: float) -> np.ndarray:
        B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry)
        taps = self.tap_values(t)
        return self.c + np.einsum("hwij,hwij->hw", taps, neighborhoods(B, self.k))

    def integral_mean(self, blurry) -> np.ndarray:
        B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry)
        kp = self.keypoints[:, :, None, None, :]
        tap_means = piecewise_mean(kp, self.slopes, self.intercepts, self.window)
        return self.c + np.einsum("hwij,hwij->hw", tap_means, neighborhoods(B, self.k))

    def equals(self, other) -> bool:
        return (
            isinstance(other, KernelField)
            and self.window == other.window
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("keypoints", "slopes", "intercepts", "c")
            )
        )


def eval_kernel(field: KernelField, blurry, x: int, y: int, t: float) -> float:
    """``c_xy + <K_xy(t), N(B_xy)>`` at one pixel, with zero padding at borders."""
    h, w = field.resolution
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"pixel ({x}, {y}) outside {w}x{h}")
    field.window.check(t)
    B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry)
    k = field.k
    r = k // 2
    patch = np.pad(B, r)[y:y + k, x:x + k]
    kp = field.keypoints[y, x]
    taps = piecewise_value(kp, field.slopes[y, x], field.intercepts[y, x], np.full((k, k), t))
    return float(field.c[y, x] + np.sum(taps * patch))


def kernel_normalization_constant(slopes, intercepts, keypoints, neighborhood, B, window):
    """Per-pixel offset making the temporal mean of the kernel mapping equal ``B``.

    By linearity the kernel-mode mean is the inner product of the per-tap
    means with the neighbourhood, so ``c = B - <tap means, N(B_xy)>``.
    """
    kp = np.asarray(keypoints, dtype=np.float64)[..., None, None, :]
    tap_means = piecewise_mean(kp, slopes, intercepts, window)
    return np.asarray(B, dtype=np.float64) - np.sum(
        tap_means * np.asarray(neighborhood), axis=(-2, -1)
    )
