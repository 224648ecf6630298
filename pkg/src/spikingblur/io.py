"""Binary formats for events, frames and fields, and the key-value config file.

All binary formats are little-endian unless noted.  Byte layouts:

SEVT (events)
    ``b"SEVT"``, version u16 = 1, width u16, height u16, T f64, count u64
    (26-byte header), then ``count`` records of x u16, y u16, t f64, p i8
    (13 bytes, packed).
SFRM (frame, lossless)
    ``b"SFRM"``, version u16 = 1, width u16, height u16, t f64 (18-byte
    header), then ``h * w`` f32 values, row-major.
PGM (frame, 16-bit)
    Binary ``P5`` with maxval 65535, big-endian samples ``round(v * 65535)``
    of the clamped intensity; a ``# t=<seconds>`` comment carries the timestamp.
SFLD (field)
    ``b"SFLD"``, version u16 = 1, h u16, w u16, n u16, k u16, T f64 (22-byte
    header); then per pixel, row-major: n + 1 keypoints f64, for each of the
    ``k * k`` taps (row-major) n slopes f64 then n intercepts f64, and c f64.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, EventStream, ExposureWindow, Frame, validate_stream
from .fitter import FitConfig
from .simulator import SCENE_KINDS, SceneSpec, ThresholdPair
from .spikerep import KernelField, SpikingField

VERSION = 1

_EVENT_HEADER = np.dtype([
    ("magic", "S4"), ("version", "<u2"), ("width", "<u2"), ("height", "<u2"),
    ("T", "<f8"), ("count", "<u8"),
])
_EVENT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "i1")])
_FRAME_HEADER = np.dtype([
    ("magic", "S4"), ("version", "<u2"), ("width", "<u2"), ("height", "<u2"), ("t", "<f8"),
])
_FIELD_HEADER = np.dtype([
    ("magic", "S4"), ("version", "<u2"), ("h", "<u2"), ("w", "<u2"), ("n", "<u2"),
    ("k", "<u2"), ("T", "<f8"),
])

EVENT_HEADER_SIZE = _EVENT_HEADER.itemsize  # 26
EVENT_RECORD_SIZE = _EVENT_RECORD.itemsize  # 13
FRAME_HEADER_SIZE = _FRAME_HEADER.itemsize  # 18
FIELD_HEADER_SIZE = _FIELD_HEADER.itemsize  # 22

FRAME_SUFFIXES = (".sfrm", ".pgm")


class FormatError(ValueError):
    """Malformed, truncated or invariant-violating file."""


def _u16(value, what):
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"{what} {value} does not fit in u16")
    return value


def _header(buf: bytes, dtype, magic: bytes, path):
    if len(buf) < dtype.itemsize:
        raise FormatError(f"{path}: truncated header")
    head = np.frombuffer(buf, dtype, count=1)[0]
    if bytes(head["magic"]) != magic:
        raise FormatError(f"{path}: bad magic {bytes(head['magic'])!r}, expected {magic!r}")
    if int(head["version"]) != VERSION:
        raise FormatError(f"{path}: unsupported version {int(head['version'])}")
    return head


# ---------------------------------------------------------------------------
# events


def encode_events(stream: EventStream) -> bytes:
    h, w = stream.resolution
    head = np.zeros(1, _EVENT_HEADER)
    head[0] = (b"SEVT", VERSION, _u16(w, "width"), _u16(h, "height"), stream.T, len(stream))
    rec = np.empty(len(stream), _EVENT_RECORD)
    if len(stream) and (stream.x.min() < 0 or stream.y.min() < 0
                        or stream.x.max() > 0xFFFF or stream.y.max() > 0xFFFF):
        raise ValueError("event coordinates do not fit in u16")
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return head.tobytes() + rec.tobytes()


def decode_events(buf: bytes, path="<bytes>", validate: bool = True) -> EventStream:
    head = _header(buf, _EVENT_HEADER, b"SEVT", path)
    count = int(head["count"])
    need = EVENT_HEADER_SIZE + count * EVENT_RECORD_SIZE
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes for {count} events, got {len(buf)}")
    rec = np.frombuffer(buf, _EVENT_RECORD, count=count, offset=EVENT_HEADER_SIZE)
    try:
        window = ExposureWindow(float(head["T"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    stream = EventStream(
        (int(head["height"]), int(head["width"])), window,
        rec["x"], rec["y"], rec["t"], rec["p"],
    )
    if validate:
        problems = validate_stream(stream)
        if problems:
            raise FormatError(f"{path}: {problems[0].message} ({len(problems)} violation(s))")
    return stream


def write_events(path, stream: EventStream) -> None:
    Path(path).write_bytes(encode_events(stream))


def read_events(path, validate: bool = True) -> EventStream:
    return decode_events(Path(path).read_bytes(), path, validate)


# ---------------------------------------------------------------------------
# frames


def encode_frame(frame: Frame) -> bytes:
    h, w = frame.resolution
    head = np.zeros(1, _FRAME_HEADER)
    head[0] = (b"SFRM", VERSION, _u16(w, "width"), _u16(h, "height"), frame.t)
    return head.tobytes() + frame.data.astype("<f4").tobytes()


def decode_frame(buf: bytes, path="<bytes>") -> Frame:
    head = _header(buf, _FRAME_HEADER, b"SFRM", path)
    h, w = int(head["height"]), int(head["width"])
    need = FRAME_HEADER_SIZE + 4 * h * w
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes for {w}x{h} frame, got {len(buf)}")
    data = np.frombuffer(buf, "<f4", count=h * w, offset=FRAME_HEADER_SIZE).reshape(h, w)
    try:
        return Frame(data.astype(np.float64), float(head["t"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def encode_pgm(frame: Frame) -> bytes:
    h, w = frame.resolution
    q = np.round(np.clip(frame.data, 0.0, 1.0) * 65535.0).astype(">u2")
    header = f"P5\n# t={frame.t!r}\n{w} {h}\n65535\n".encode("ascii")
    return header + q.tobytes()


_PGM_TOKEN = re.compile(rb"\s*(#[^\n]*\n|\S+)")


def decode_pgm(buf: bytes, path="<bytes>") -> Frame:
    """Parse a 16-bit binary PGM; the timestamp comes from a ``# t=`` comment (else 0)."""
    pos, tokens, t = 0, [], 0.0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(buf, pos)
        if not m:
            raise FormatError(f"{path}: malformed PGM header")
        tok = m.group(1)
        pos = m.end()
        if tok.startswith(b"#"):
            c = tok[1:].strip()
            if c.startswith(b"t="):
                try:
                    t = float(c[2:])
                except ValueError:
                    raise FormatError(f"{path}: bad timestamp comment {c!r}") from None
            continue
        tokens.append(tok)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: bad magic {tokens[0]!r}, expected b'P5'")
    try:
        w, h, maxval = (int(v) for v in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 65535:
        raise FormatError(f"{path}: only maxval 65535 is supported, got {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: malformed PGM header")
    pos += 1
    if len(buf) - pos != 2 * h * w:
        raise FormatError(f"{path}: expected {2 * h * w} data bytes, got {len(buf) - pos}")
    q = np.frombuffer(buf, ">u2", count=h * w, offset=pos).reshape(h, w)
    return Frame(q.astype(np.float64) / 65535.0, t)


def write_frame(path, frame: Frame) -> None:
    """Write ``frame`` as PGM if ``path`` ends in ``.pgm``, otherwise as SFRM."""
    data = encode_pgm(frame) if str(path).lower().endswith(".pgm") else encode_frame(frame)
    Path(path).write_bytes(data)


def read_frame(path) -> Frame:
    buf = Path(path).read_bytes()
    if buf[:2] == b"P5" or str(path).lower().endswith(".pgm"):
        return decode_pgm(buf, path)
    return decode_frame(buf, path)


def frame_paths(directory) -> list[Path]:
    """Frame files (``.sfrm``/``.pgm``) in ``directory``, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def write_frames(directory, frames, fmt: str = "sfrm", prefix: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(frames) - 1)))
    paths = []
    for i, f in enumerate(frames):
        p = d / f"{prefix}_{i:0{digits}d}.{fmt}"
        write_frame(p, f)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# fields


def field_size(h: int, w: int, n: int, k: int) -> int:
    return FIELD_HEADER_SIZE + h * w * 8 * ((n + 1) + k * k * 2 * n + 1)


def encode_field(f) -> bytes:
    h, w = f.resolution
    n, k = f.n, f.k
    head = np.zeros(1, _FIELD_HEADER)
    head[0] = (b"SFLD", VERSION, _u16(h, "height"), _u16(w, "width"), _u16(n, "n"),
               _u16(k, "k"), f.window.T)
    taps = (h, w, k * k, n)
    body = np.concatenate([
        f.keypoints.reshape(h, w, n + 1),
        np.concatenate([f.slopes.reshape(taps), f.intercepts.reshape(taps)], axis=-1)
        .reshape(h, w, -1),
        f.c.reshape(h, w, 1),
    ], axis=-1)
    return head.tobytes() + body.astype("<f8").tobytes()


def decode_field(buf: bytes, path="<bytes>"):
    head = _header(buf, _FIELD_HEADER, b"SFLD", path)
    h, w, n, k = (int(head[a]) for a in ("h", "w", "n", "k"))
    if n < 1 or k < 1 or k % 2 == 0:
        raise FormatError(f"{path}: invalid n={n} or k={k}")
    need = field_size(h, w, n, k)
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, got {len(buf)}")
    body = np.frombuffer(buf, "<f8", offset=FIELD_HEADER_SIZE).reshape(h, w, -1)
    kp = body[..., : n + 1]
    taps = body[..., n + 1: -1].reshape(h, w, k * k, 2 * n)
    c = body[..., -1]
    try:
        window = ExposureWindow(float(head["T"]))
        if k == 1:
            return SpikingField(window, kp, taps[:, :, 0, :n], taps[:, :, 0, n:], c)
        shape = (h, w, k, k, n)
        return KernelField(window, kp, taps[..., :n].reshape(shape),
                           taps[..., n:].reshape(shape), c)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_field(path, f) -> None:
    Path(path).write_bytes(encode_field(f))


def read_field(path):
    return decode_field(Path(path).read_bytes(), path)


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class SimSettings:
    epsilon_floor: float = 1e-3
    time_samples: int = 10001
    quadrature_samples: int = 4001
    drop_rate: float = 0.0
    jitter: float = 0.0
    seed: int = 0
    frames: int = 30


@dataclass(frozen=True)
class RenderSettings:
    fps: float = 30.0
    scale: int = 1
    clamp: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a config file can set."""

    scene: SceneSpec
    thresholds: ThresholdPair = ThresholdPair()
    sim: SimSettings = SimSettings()
    fit: FitConfig = FitConfig()
    render: RenderSettings = RenderSettings()

    @property
    def window(self) -> ExposureWindow:
        return self.scene.window

    @property
    def c_thr(self) -> float:
        """Per-event threshold for fitting: ``fit.c_thr`` or else ``threshold.c_plus``."""
        return self.fit.c_thr if self.fit.c_thr is not None else self.thresholds.c_plus


def _parse_bool(s):
    v = s.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _optional(parse):
    def inner(s):
        return None if s.lower() in ("none", "") else parse(s)
    return inner


def _parse_int(s):
    v = float(s) if re.fullmatch(r"[+-]?\d+(\.0*)?([eE]\+?\d+)?", s) else None
    if v is None or v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _parse_levels(s):
    return tuple(float(v) for v in s.split(","))


# key -> (section, attribute, parser)
CONFIG_KEYS = {
    "scene.kind": ("scene", "kind", str),
    "scene.height": ("scene", "height", _parse_int),
    "scene.width": ("scene", "width", _parse_int),
    "scene.T": ("scene", "T", float),
    "scene.velocity": ("scene", "velocity", float),
    "scene.bar_width": ("scene", "bar_width", float),
    "scene.levels": ("scene", "levels", _parse_levels),
    "scene.position": ("scene", "position", _optional(float)),
    "scene.block_size": ("scene", "block_size", _parse_int),
    "scene.switches": ("scene", "switches", _parse_int),
    "scene.seed": ("scene", "seed", _parse_int),
    "scene.field": ("scene", "field", str),
    "threshold.c_plus": ("threshold", "c_plus", float),
    "threshold.c_minus": ("threshold", "c_minus", float),
    "sim.epsilon_floor": ("sim", "epsilon_floor", float),
    "sim.time_samples": ("sim", "time_samples", _parse_int),
    "sim.quadrature_samples": ("sim", "quadrature_samples", _parse_int),
    "sim.drop_rate": ("sim", "drop_rate", float),
    "sim.jitter": ("sim", "jitter", float),
    "sim.seed": ("sim", "seed", _parse_int),
    "sim.frames": ("sim", "frames", _parse_int),
    "fit.mode": ("fit", "mode", str),
    "fit.n": ("fit", "n", _parse_int),
    "fit.k": ("fit", "k", _parse_int),
    "fit.outer_iters": ("fit", "outer_iters", _parse_int),
    "fit.inner_iters": ("fit", "inner_iters", _parse_int),
    "fit.step_size": ("fit", "step_size", float),
    "fit.loss": ("fit", "loss", str),
    "fit.event_weight": ("fit", "event_weight", float),
    "fit.smoothness_weight": ("fit", "smoothness_weight", float),
    "fit.seed": ("fit", "seed", _parse_int),
    "fit.tol": ("fit", "tol", float),
    "fit.c_thr": ("fit", "c_thr", _optional(float)),
    "fit.epsilon": ("fit", "epsilon", float),
    "fit.delta": ("fit", "delta", _optional(float)),
    "fit.freeze_keypoints": ("fit", "freeze_keypoints", _parse_bool),
    "render.fps": ("render", "fps", float),
    "render.scale": ("render", "scale", _parse_int),
    "render.clamp": ("render", "clamp", _parse_bool),
}

SCENE_DEFAULTS = {
    "kind": "moving-bar", "height": 64, "width": 64, "T": 1.0, "velocity": 32.0,
    "bar_width": 8.0, "levels": (0.0, 1.0), "position": None, "block_size": 8,
    "switches": 2, "seed": 0, "field": None,
}


def parse_config(text: str, source: str = "<config>", base_dir=None) -> PipelineConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        section, attr, parse = CONFIG_KEYS[key]
        try:
            values[key] = (section, attr, parse(raw), lineno)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None

    def section(name):
        return {attr: v for s, attr, v, _ in values.values() if s == name}

    def build(name, make):
        try:
            return make()
        except (ConfigError, ValueError, TypeError) as exc:
            lines = sorted(ln for s, _, _, ln in values.values() if s == name)
            where = f"{source}:{lines[0]}" if lines else source
            raise ConfigError(f"{where}: invalid {name} settings: {exc}") from None

    sc = {**SCENE_DEFAULTS, **section("scene")}
    if sc["kind"] not in SCENE_KINDS:
        raise ConfigError(f"{source}: unknown scene kind {sc['kind']!r}")
    fld = None
    if sc["field"] is not None:
        p = Path(sc["field"])
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        fld = read_field(p)

    def make_scene():
        if sc["height"] < 1 or sc["width"] < 1:
            raise ConfigError("resolution must be positive")
        return SceneSpec(
            sc["kind"], (sc["height"], sc["width"]), ExposureWindow(sc["T"]),
            velocity=sc["velocity"], bar_width=sc["bar_width"], levels=sc["levels"],
            position=sc["position"], block_size=sc["block_size"], switches=sc["switches"],
            seed=sc["seed"], field=fld,
        )

    def make_sim():
        s = SimSettings(**section("sim"))
        if s.time_samples < 2 or s.quadrature_samples < 2 or s.frames < 1:
            raise ConfigError("time_samples and quadrature_samples must be >= 2, frames >= 1")
        if not s.epsilon_floor > 0 or not 0 <= s.drop_rate < 1 or s.jitter < 0:
            raise ConfigError("need epsilon_floor > 0, 0 <= drop_rate < 1, jitter >= 0")
        return s

    def make_render():
        r = RenderSettings(**section("render"))
        if not r.fps > 0 or r.scale < 1:
            raise ConfigError("need fps > 0 and scale >= 1")
        return r

    return PipelineConfig(
        scene=build("scene", make_scene),
        thresholds=build("threshold", lambda: ThresholdPair(**section("threshold"))),
        sim=build("sim", make_sim),
        fit=build("fit", lambda: FitConfig(**section("fit"))),
        render=build("render", make_render),
    )


def load_config(path) -> PipelineConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p), p.parent)


def default_config() -> PipelineConfig:
    return parse_config("")
