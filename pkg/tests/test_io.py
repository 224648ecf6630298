import struct

import numpy as np
import pytest

from spikingblur import io
from spikingblur.core import ConfigError, EventStream, ExposureWindow, Frame
from spikingblur.spikerep import KernelField, SpikingField, keypoints_from_widths

WIN = ExposureWindow(1.0)


def random_stream(rng, count, h=9, w=11, T=1.0):
    return EventStream.from_arrays(
        (h, w), ExposureWindow(T), rng.integers(0, w, count), rng.integers(0, h, count),
        rng.uniform(-0.5 * T, 0.5 * T, count), rng.choice([-1, 1], count),
    )


def random_spiking_field(rng, h=3, w=4, n=5):
    return SpikingField.from_params(WIN, rng.normal(size=(h, w, n)), rng.normal(size=(h, w, n)),
                                    rng.normal(size=(h, w, n)), rng.uniform(size=(h, w)))


def random_kernel_field(rng, h=3, w=2, n=4, k=3):
    return KernelField(WIN, keypoints_from_widths(rng.normal(size=(h, w, n)), WIN),
                       rng.normal(size=(h, w, k, k, n)), rng.normal(size=(h, w, k, k, n)),
                       rng.normal(size=(h, w)))


class TestEvents:
    def test_header_size(self):
        assert io.EVENT_HEADER_SIZE == 4 + 2 + 2 + 2 + 8 + 8 == 26
        assert io.EVENT_RECORD_SIZE == 13
        assert len(io.encode_events(EventStream((2, 3), WIN))) == 26

    def test_round_trip(self, rng, tmp_path):
        s = random_stream(rng, 500)
        io.write_events(tmp_path / "e.sevt", s)
        assert io.read_events(tmp_path / "e.sevt") == s

    def test_byte_layout(self):
        s = EventStream((2, 3), ExposureWindow(0.5), [2], [1], [0.125], [-1])
        buf = io.encode_events(s)
        assert buf[:4] == b"SEVT"
        assert struct.unpack("<HHHdQ", buf[4:26]) == (1, 3, 2, 0.5, 1)
        assert struct.unpack("<HHdb", buf[26:]) == (2, 1, 0.125, -1)

    def test_bad_magic(self, rng):
        buf = bytearray(io.encode_events(random_stream(rng, 3)))
        buf[0] ^= 0xFF
        with pytest.raises(io.FormatError):
            io.decode_events(bytes(buf))

    def test_bad_version(self, rng):
        buf = bytearray(io.encode_events(random_stream(rng, 3)))
        buf[4] = 2
        with pytest.raises(io.FormatError):
            io.decode_events(bytes(buf))

    def test_truncated(self, rng):
        buf = io.encode_events(random_stream(rng, 3))
        for cut in (10, len(buf) - 1):
            with pytest.raises(io.FormatError):
                io.decode_events(buf[:cut])

    def test_invariant_violation(self):
        bad = EventStream((2, 2), WIN, [0], [0], [0.0], [0])
        with pytest.raises(io.FormatError, match="polarity"):
            io.decode_events(io.encode_events(bad))
        assert len(io.decode_events(io.encode_events(bad), validate=False)) == 1


class TestFrames:
    def test_sfrm_round_trip(self, rng, tmp_path):
        f = Frame(rng.uniform(size=(5, 7)).astype(np.float32), 0.123)
        io.write_frame(tmp_path / "a.sfrm", f)
        g = io.read_frame(tmp_path / "a.sfrm")
        assert g == f
        assert io.encode_frame(g) == io.encode_frame(f)
        assert len(io.encode_frame(f)) == 18 + 4 * 35

    def test_pgm_round_trip(self, rng, tmp_path):
        f = Frame(rng.uniform(size=(6, 4)), -0.25)
        io.write_frame(tmp_path / "a.pgm", f)
        g = io.read_frame(tmp_path / "a.pgm")
        assert g.t == -0.25
        assert np.abs(g.data - f.data).max() <= 1 / 131070

    def test_pgm_extremes(self):
        buf = io.encode_pgm(Frame(np.array([[0.0, 1.0]])))
        assert buf.startswith(b"P5") and buf[-4:] == b"\x00\x00\xff\xff"

    def test_pgm_header_with_comments(self):
        buf = b"P5\n# made elsewhere\n2 1\n# t=0.5\n65535\n" + b"\x80\x00\x00\x01"
        f = io.decode_pgm(buf)
        assert f.t == 0.5 and f.data[0, 0] == 0x8000 / 65535

    def test_pgm_errors(self):
        with pytest.raises(io.FormatError):
            io.decode_pgm(b"P2\n1 1\n65535\n" + b"\x00\x00")
        with pytest.raises(io.FormatError):
            io.decode_pgm(b"P5\n1 1\n255\n" + b"\x00")
        with pytest.raises(io.FormatError):
            io.decode_pgm(b"P5\n2 2\n65535\n" + b"\x00\x00")

    def test_bad_magic(self):
        buf = bytearray(io.encode_frame(Frame(np.zeros((2, 2)))))
        buf[3] ^= 1
        with pytest.raises(io.FormatError):
            io.decode_frame(bytes(buf))

    def test_directory_listing(self, rng, tmp_path):
        seq = [Frame(rng.uniform(size=(2, 2)), t) for t in (0.0, 0.1, 0.2)]
        io.write_frames(tmp_path / "d", seq, "pgm")
        (tmp_path / "d" / "notes.txt").write_text("x")
        paths = io.frame_paths(tmp_path / "d")
        assert [p.name for p in paths] == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"]


class TestFields:
    def test_spiking_round_trip(self, rng, tmp_path):
        f = random_spiking_field(rng)
        io.write_field(tmp_path / "f.sfld", f)
        g = io.read_field(tmp_path / "f.sfld")
        assert isinstance(g, SpikingField) and g.equals(f)
        buf = io.encode_field(f)
        assert struct.unpack("<HHHHH", buf[4:14]) == (1, 3, 4, 5, 1)

    def test_kernel_round_trip(self, rng):
        f = random_kernel_field(rng)
        g = io.decode_field(io.encode_field(f))
        assert isinstance(g, KernelField) and g.equals(f)

    @pytest.mark.parametrize("h,w,n,k", [(3, 4, 5, 1), (2, 3, 4, 3), (1, 1, 1, 5)])
    def test_file_size(self, rng, h, w, n, k):
        f = random_kernel_field(rng, h, w, n, k) if k > 1 else random_spiking_field(rng, h, w, n)
        size = 22 + h * w * (8 * (n + 1) + k * k * 16 * n + 8)
        assert len(io.encode_field(f)) == size == io.field_size(h, w, n, k)

    def test_pixel_layout(self, rng):
        f = random_spiking_field(rng, 1, 2, 2)
        body = np.frombuffer(io.encode_field(f), "<f8", offset=22)
        p1 = body[8:]  # 3 keypoints + 2 slopes + 2 intercepts + c per pixel
        np.testing.assert_array_equal(p1[:3], f.keypoints[0, 1])
        np.testing.assert_array_equal(p1[3:5], f.slopes[0, 1])
        np.testing.assert_array_equal(p1[5:7], f.intercepts[0, 1])
        assert p1[7] == f.c[0, 1]

    def test_invalid_keypoints_rejected(self, rng):
        buf = bytearray(io.encode_field(random_spiking_field(rng, 1, 1, 3)))
        struct.pack_into("<d", buf, 22 + 8, 0.9)  # second keypoint beyond T/2
        with pytest.raises(io.FormatError):
            io.decode_field(bytes(buf))

    def test_bad_magic(self, rng):
        buf = bytearray(io.encode_field(random_spiking_field(rng)))
        buf[1] ^= 0x20
        with pytest.raises(io.FormatError):
            io.decode_field(bytes(buf))


class TestConfig:
    def test_defaults(self):
        cfg = io.parse_config("# nothing\n\n")
        assert cfg.scene.kind == "moving-bar" and cfg.scene.resolution == (64, 64)
        assert cfg.fit.n == 10 and cfg.render.fps == 30.0 and cfg.c_thr == 0.2

    def test_values(self):
        text = """
        scene.kind = linear-gradient-drift   # trailing comment
        scene.levels = 0.1, 0.9
        scene.T = 2
        threshold.c_plus = 0.3
        fit.n = 6
        fit.c_thr = none
        fit.freeze_keypoints = yes
        render.scale = 4
        """
        cfg = io.parse_config(text)
        assert cfg.scene.levels == (0.1, 0.9) and cfg.window.T == 2.0
        assert cfg.fit.n == 6 and cfg.fit.freeze_keypoints and cfg.render.scale == 4
        assert cfg.c_thr == 0.3

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match=r":3: unknown key 'foo'"):
            io.parse_config("fit.n = 3\n\nfoo = 1\n")

    def test_invalid_value(self):
        with pytest.raises(ConfigError, match=r":1:.*n must be at least 1"):
            io.parse_config("fit.n = 0")

    @pytest.mark.parametrize("text", ["fit.n = three", "fit.n = 2.5", "render.clamp = maybe",
                                      "scene.T = fast", "just words", "fit.n = 1\nfit.n = 2"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            io.parse_config(text)

    def test_field_playback_path(self, rng, tmp_path):
        f = random_spiking_field(rng, 2, 2, 3)
        io.write_field(tmp_path / "f.sfld", f)
        (tmp_path / "c.cfg").write_text(
            "scene.kind = spiking-field-playback\nscene.height = 2\nscene.width = 2\n"
            "scene.field = f.sfld\n")
        cfg = io.load_config(tmp_path / "c.cfg")
        assert cfg.scene.field.equals(f)
