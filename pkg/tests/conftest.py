import numpy as np
import pytest

from spikingblur.core import ExposureWindow
from spikingblur.spikerep import SpikingField, SpikingPixel, keypoints_from_widths


def random_pixel(rng, n=None, T=1.0, B=None):
    """Random blur-normalised pixel with moderate raw widths."""
    n = int(rng.integers(1, 17)) if n is None else n
    kp = keypoints_from_widths(rng.normal(0, 1, n), T)
    m = rng.normal(0, 1, n)
    b = rng.normal(0, 1, n)
    B = rng.uniform(0, 1) if B is None else B
    return SpikingPixel.with_blur(kp, m, b, B), B


def random_field(rng, h, w, n, T=1.0, lo=0.1, hi=0.9):
    """Field whose segment endpoint values lie in ``[lo, hi]`` (so it is never clamped)."""
    win = ExposureWindow(T)
    kp = keypoints_from_widths(rng.normal(0, 0.3, (h, w, n)), T)
    v0 = rng.uniform(lo, hi, (h, w, n))
    v1 = rng.uniform(lo, hi, (h, w, n))
    m = (v1 - v0) / np.diff(kp, axis=-1)
    b = v0 - m * kp[..., :-1]
    return SpikingField(win, kp, m, b, np.zeros((h, w)))


def quadrature_mean(pixel, samples=1_000_000):
    """Trapezoid-rule temporal mean with ``samples`` points split across segments.

    Each segment is integrated on its own grid (endpoints included) using its
    own linear formula, so jumps at keypoints cost no quadrature error.
    """
    kp = pixel.keypoints
    T = kp[-1] - kp[0]
    total = 0.0
    for i in range(pixel.n):
        count = max(2, int(round(samples * (kp[i + 1] - kp[i]) / T)))
        t = np.linspace(kp[i], kp[i + 1], count)
        total += np.trapezoid(pixel.c + pixel.slopes[i] * t + pixel.intercepts[i], t)
    return total / T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion -> (passed, detail); filled by test_acceptance and echoed after the run
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
