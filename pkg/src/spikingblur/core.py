"""Domain types for event streams and frames, plus stream utilities.

Events are stored column-wise (``x``, ``y``, ``t``, ``p`` arrays) so that
streams of millions of events stay cheap to slice and bin.  Timestamps are
float64 seconds relative to the centre of the exposure window, which spans
``[-T/2, T/2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


@dataclass(frozen=True)
class ExposureWindow:
    """Exposure interval ``[-T/2, T/2]`` of length ``T`` seconds."""

    T: float

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"exposure length must be positive, got {self.T!r}")

    @property
    def start(self) -> float:
        return -0.5 * self.T

    @property
    def end(self) -> float:
        return 0.5 * self.T

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (t >= self.start) & (t <= self.end)

    def check(self, t) -> None:
        """Raise ``ValueError`` if any of ``t`` lies outside the window."""
        if not np.all(self.contains(t)):
            raise ValueError(
                f"timestamp outside exposure window [{self.start}, {self.end}]"
            )

    def uniform_timestamps(self, count: int) -> np.ndarray:
        """Centres of ``count`` equal sub-intervals of the window."""
        if count < 1:
            raise ValueError("frame count must be positive")
        return self.start + (np.arange(count) + 0.5) * (self.T / count)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Events recorded on an ``h x w`` sensor during one exposure.

    The constructor stores what it is given; use :meth:`from_arrays` (or
    :func:`canonical_order`) to obtain the canonical ordering.
    """

    resolution: tuple[int, int]
    window: ExposureWindow
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self):
        h, w = (int(v) for v in self.resolution)
        object.__setattr__(self, "resolution", (h, w))
        object.__setattr__(self, "x", _frozen(self.x, np.int64))
        object.__setattr__(self, "y", _frozen(self.y, np.int64))
        object.__setattr__(self, "t", _frozen(self.t, np.float64))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")

    @classmethod
    def from_arrays(cls, resolution, window, x, y, t, p) -> "EventStream":
        """Build a stream and sort it into canonical order."""
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        p = np.asarray(p, dtype=np.int8).reshape(-1)
        order = canonical_order(x, y, t, p)
        return cls(resolution, window, x[order], y[order], t[order], p[order])

    @classmethod
    def from_events(cls, resolution, window, events: Sequence) -> "EventStream":
        if len(events) == 0:
            return cls(resolution, window)
        x, y, t, p = (np.array(col) for col in zip(*events))
        return cls.from_arrays(resolution, window, x, y, t, p)

    @property
    def T(self) -> float:
        return self.window.T

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x, self.y, self.t, self.p):
            yield Event(int(x), int(y), float(t), int(p))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.window == other.window
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def pixel_index(self) -> np.ndarray:
        """Flat row-major pixel index ``y * w + x`` of every event."""
        return self.y * self.resolution[1] + self.x

    def select(self, mask) -> "EventStream":
        mask = np.asarray(mask)
        return EventStream(
            self.resolution, self.window,
            self.x[mask], self.y[mask], self.t[mask], self.p[mask],
        )

    def polarity_sum(self) -> np.ndarray:
        """Per-pixel signed polarity sum as an ``h x w`` integer array."""
        h, w = self.resolution
        counts = np.bincount(
            self.pixel_index(), weights=self.p.astype(np.float64), minlength=h * w
        )
        return counts.reshape(h, w).astype(np.int64)


def canonical_order(x, y, t, p) -> np.ndarray:
    """Permutation sorting events by ``t``, ties broken by ``(y, x, p)``."""
    return np.lexsort((np.asarray(p), np.asarray(x), np.asarray(y), np.asarray(t)))


@dataclass(frozen=True, eq=False)
class Frame:
    """An ``h x w`` intensity image with a timestamp.

    Rendered frames are clamped to ``[0, 1]`` unless clamping was
    explicitly disabled, so the range is not enforced here.
    """

    data: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("frame data must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "t", float(self.t))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape

    def in_range(self) -> bool:
        return bool(np.all((self.data >= 0.0) & (self.data <= 1.0)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[Frame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if frames:
            shape = frames[0].resolution
            if any(f.resolution != shape for f in frames):
                raise ValueError("frames must share one resolution")
            ts = np.array([f.t for f in frames])
            if np.any(np.diff(ts) <= 0):
                raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.t for f in self.frames], dtype=np.float64)

    @property
    def resolution(self) -> tuple[int, int]:
        if not self.frames:
            raise ValueError("empty sequence has no resolution")
        return self.frames[0].resolution

    def stack(self) -> np.ndarray:
        """Frames as an ``N x h x w`` array."""
        return np.stack([f.data for f in self.frames])

    @classmethod
    def from_array(cls, data, timestamps) -> "FrameSequence":
        return cls(tuple(Frame(d, t) for d, t in zip(data, timestamps)))


@dataclass(frozen=True)
class EventHistogram:
    """Signed event counts binned into ``m`` temporal slices, shape ``(m, h, w)``."""

    data: np.ndarray

    @property
    def bins(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    message: str


def validate_stream(stream: EventStream) -> list[Violation]:
    """List every invariant violation in ``stream``; empty if the stream is valid."""
    h, w = stream.resolution
    report = []
    bad_xy = (stream.x < 0) | (stream.x >= w) | (stream.y < 0) | (stream.y >= h)
    for i in np.flatnonzero(bad_xy):
        report.append(Violation(
            "coordinate", int(i),
            f"event {i}: pixel ({stream.x[i]}, {stream.y[i]}) outside {w}x{h}",
        ))
    bad_t = ~stream.window.contains(stream.t) | ~np.isfinite(stream.t)
    for i in np.flatnonzero(bad_t):
        report.append(Violation(
            "timestamp", int(i),
            f"event {i}: timestamp {stream.t[i]} outside exposure window",
        ))
    bad_p = (stream.p != 1) & (stream.p != -1)
    for i in np.flatnonzero(bad_p):
        report.append(Violation(
            "polarity", int(i), f"event {i}: polarity {stream.p[i]} not in {{+1, -1}}"
        ))
    if len(stream) > 1:
        order = canonical_order(stream.x, stream.y, stream.t, stream.p)
        out_of_place = np.flatnonzero(order != np.arange(len(stream)))
        if len(out_of_place):
            i = int(out_of_place[0])
            report.append(Violation(
                "order", i, f"event {i}: stream not in canonical (t, y, x, p) order"
            ))
    return report


def slice_by_time(stream: EventStream, t0: float, t1: float) -> EventStream:
    """Events with ``t0 <= t < t1``, order preserved."""
    win = stream.window
    if not (win.start <= t0 <= t1 <= win.end):
        raise ValueError(
            f"slice [{t0}, {t1}) not inside window [{win.start}, {win.end}]"
        )
    return stream.select((stream.t >= t0) & (stream.t < t1))


def voxelize(stream: EventStream, bins: int) -> EventHistogram:
    """Bin events into a signed ``bins x h x w`` histogram.

    The bin of an event is ``floor((t + T/2) / T * bins)`` clamped to
    ``[0, bins - 1]``, so events exactly at ``T/2`` land in the last bin.
    """
    if bins < 1:
        raise ValueError("bins must be a positive integer")
    h, w = stream.resolution
    T = stream.T
    b = np.floor((stream.t + 0.5 * T) / T * bins).astype(np.int64)
    b = np.clip(b, 0, bins - 1)
    hist = np.zeros((bins, h, w), dtype=np.int64)
    np.add.at(hist, (b, stream.y, stream.x), stream.p.astype(np.int64))
    return EventHistogram(hist)
