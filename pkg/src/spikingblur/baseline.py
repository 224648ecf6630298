"""Event-based double integral (EDI) reconstruction.

Every event is taken to change log intensity by the same magnitude, so the
latent intensity is ``L(t) = L0 * exp(c * E(t))`` with ``E`` the running
polarity sum.  ``L0`` follows from requiring the exposure mean to equal the
blurry image.
"""

from __future__ import annotations

import numpy as np

from .core import EventStream, Frame, FrameSequence


def edi_reconstruct(blurry: Frame, events: EventStream, c_thr: float, timestamps,
                    clamp: bool = True) -> FrameSequence:
    """Reconstruct frames at ``timestamps`` from a blurry frame and its events.

    The normalising integral of the piecewise-constant ``exp(c * E(s))`` is
    summed exactly over the intervals between consecutive events.
    """
    if not c_thr > 0:
        raise ValueError("c_thr must be positive")
    B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry, dtype=np.float64)
    if events.resolution != B.shape:
        raise ValueError(f"event resolution {events.resolution} != blurry {B.shape}")
    timestamps = np.atleast_1d(np.asarray(timestamps, dtype=np.float64))
    win = events.window
    win.check(timestamps)
    h, w = B.shape
    P = h * w
    T = win.T

    pix = events.pixel_index()
    order = np.lexsort((events.t, pix))
    pix, t, p = pix[order], events.t[order], events.p[order].astype(np.int64)

    # running sum after each event, restarted per pixel
    csum = np.cumsum(p)
    first = np.r_[True, pix[1:] != pix[:-1]] if len(pix) else np.zeros(0, bool)
    starts = np.flatnonzero(first)
    base = np.repeat(csum[starts] - p[starts], np.diff(np.r_[starts, len(pix)]))
    E_after = csum - base
    last = np.r_[pix[1:] != pix[:-1], True] if len(pix) else np.zeros(0, bool)
    t_next = np.where(last, win.end, np.r_[t[1:], win.end])

    # fraction of the window spent at each level, relative to T
    frac = np.full(P, 1.0)
    if len(pix):
        t_first = np.full(P, win.end)
        t_first[pix[first]] = t[first]
        frac = (t_first - win.start) / T
        frac += np.bincount(pix, weights=np.exp(c_thr * E_after) * (t_next - t) / T,
                            minlength=P)
    L0 = B.reshape(P) / frac

    frames = []
    for tr in timestamps:
        E = np.bincount(pix, weights=p * (t <= tr), minlength=P) if len(pix) else np.zeros(P)
        L = L0 * np.exp(c_thr * E)
        if clamp:
            L = np.clip(L, 0.0, 1.0)
        frames.append(Frame(L.reshape(h, w), tr))
    return FrameSequence(tuple(frames))


def repeated_blur(blurry: Frame, timestamps) -> FrameSequence:
    """Trivial baseline: the blurry image at every timestamp."""
    B = blurry.data if isinstance(blurry, Frame) else blurry
    return FrameSequence(tuple(Frame(B, t) for t in np.atleast_1d(timestamps)))
