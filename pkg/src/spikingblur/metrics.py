"""Frame and sequence quality metrics: MSE, PSNR and SSIM on the [0, 1] scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import Frame, FrameSequence

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = a.data if isinstance(a, Frame) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Frame) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared difference."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float) -> float:
    return float("inf") if err == 0 else float(-10.0 * np.log10(err))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; ``inf`` for identical frames."""
    return psnr_from_mse(mse(a, b))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter(img, g):
    out = correlate1d(img, g, axis=0, mode="reflect")
    return correlate1d(out, g, axis=1, mode="reflect")


def ssim(a, b) -> float:
    """Single-scale SSIM, Gaussian 11x11 window (sigma 1.5), data range 1.

    The SSIM map is averaged over window positions that do not touch the
    image border.
    """
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    var_a = _filter(a * a, g) - mu_a ** 2
    var_b = _filter(b * b, g) - mu_b ** 2
    cov = _filter(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    r = SSIM_WINDOW // 2
    return float(np.mean((num / den)[r:-r, r:-r]))


@dataclass(frozen=True)
class SequenceMetrics:
    """Per-frame metric columns plus their unweighted means."""

    t: np.ndarray
    mse: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray

    @property
    def mean(self) -> dict:
        return {
            "mse": float(np.mean(self.mse)),
            "psnr": float(np.mean(self.psnr)),
            "ssim": float(np.mean(self.ssim)),
        }

    def to_csv(self) -> str:
        rows = ["frame_index,t,mse,psnr,ssim"]
        for i, (t, e, p, s) in enumerate(zip(self.t, self.mse, self.psnr, self.ssim)):
            rows.append(f"{i},{float(t)!r},{float(e)!r},{float(p)!r},{float(s)!r}")
        m = self.mean
        rows.append(f"mean,,{m['mse']!r},{m['psnr']!r},{m['ssim']!r}")
        return "\n".join(rows) + "\n"


def sequence_metrics(a: FrameSequence, b: FrameSequence, T: float = 1.0) -> SequenceMetrics:
    """Metrics of co-timed frame pairs; timestamps must agree within ``1e-9 * T``."""
    if len(a) != len(b):
        raise ValueError(f"sequence length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("sequences are empty")
    ta, tb = a.timestamps, b.timestamps
    if np.any(np.abs(ta - tb) > 1e-9 * T):
        raise ValueError("sequences are not co-timed")
    errs = np.array([mse(x, y) for x, y in zip(a, b)])
    return SequenceMetrics(
        t=ta,
        mse=errs,
        psnr=np.array([psnr_from_mse(e) for e in errs]),
        ssim=np.array([ssim(x, y) for x, y in zip(a, b)]),
    )
