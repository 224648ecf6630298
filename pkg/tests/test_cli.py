import subprocess
import sys

import numpy as np
import pytest

from spikingblur import io
from spikingblur.baseline import edi_reconstruct
from spikingblur.cli import main

SMALL = """
scene.kind = moving-bar
scene.height = 12
scene.width = 32
scene.velocity = 16
scene.bar_width = 4
sim.time_samples = 2001
sim.quadrature_samples = 1001
fit.n = 6
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "small.cfg").write_text(SMALL)
    (tmp_path / "static.cfg").write_text(SMALL.replace("velocity = 16", "velocity = 0"))
    return tmp_path


def simulate(d, cfg="small.cfg", frames=10, tag="", fmt="sfrm"):
    rc = main(["simulate", "--config", str(d / cfg), "--out-events", str(d / f"ev{tag}.sevt"),
               "--out-blur", str(d / f"blur{tag}.sfrm"), "--out-truth-dir", str(d / f"truth{tag}"),
               "--frames", str(frames), "--format", fmt])
    assert rc == 0


class TestSimulate:
    def test_static_scene(self, workdir):
        simulate(workdir, "static.cfg")
        assert len(io.read_events(workdir / "ev.sevt")) == 0
        truth = io.read_frame(io.frame_paths(workdir / "truth")[0])
        np.testing.assert_allclose(io.read_frame(workdir / "blur.sfrm").data, truth.data)

    def test_moving_bar_and_determinism(self, workdir):
        simulate(workdir, tag="a")
        simulate(workdir, tag="b")
        assert len(io.read_events(workdir / "eva.sevt")) > 0
        for name in ("ev{}.sevt", "blur{}.sfrm"):
            assert (workdir / name.format("a")).read_bytes() == (
                workdir / name.format("b")).read_bytes()
        assert len(io.frame_paths(workdir / "trutha")) == 10

    def test_pgm_truth(self, workdir):
        simulate(workdir, frames=3, fmt="pgm")
        assert [p.suffix for p in io.frame_paths(workdir / "truth")] == [".pgm"] * 3


class TestFit:
    def test_supervised_and_render(self, workdir):
        simulate(workdir, frames=30)
        d = workdir
        rc = main(["fit", "--blur", str(d / "blur.sfrm"), "--targets-dir", str(d / "truth"),
                   "--config", str(d / "small.cfg"), "--out-field", str(d / "f.sfld")])
        assert rc == 0
        log = (d / "f.sfld.loss.csv").read_text().strip().split("\n")
        assert log[0] == "iteration,loss" and len(log) >= 2
        assert main(["render", "--field", str(d / "f.sfld"), "--blur", str(d / "blur.sfrm"),
                     "--fps", "30", "--out-dir", str(d / "pred")]) == 0
        assert main(["eval", "--pred-dir", str(d / "pred"), "--truth-dir", str(d / "truth"),
                     "--out", str(d / "r.csv")]) == 0
        rows = (d / "r.csv").read_text().strip().split("\n")
        assert len(rows) == 1 + 30 + 1
        assert float(rows[-1].split(",")[3]) > 30.0

    def test_event_only_empty_events(self, workdir):
        simulate(workdir, "static.cfg", frames=2)
        d = workdir
        assert main(["fit", "--blur", str(d / "blur.sfrm"), "--events", str(d / "ev.sevt"),
                     "--out-field", str(d / "f.sfld"), "--report", str(d / "log.csv")]) == 0
        field = io.read_field(d / "f.sfld")
        B = io.read_frame(d / "blur.sfrm").data
        np.testing.assert_allclose(field.values(0.3), B, atol=1e-15)

    def test_missing_inputs_is_usage_error(self, workdir, capsys):
        simulate(workdir, frames=1)
        rc = main(["fit", "--blur", str(workdir / "blur.sfrm"), "--out-field",
                   str(workdir / "f.sfld")])
        assert rc == 2 and "needs --events" in capsys.readouterr().err


class TestRender:
    def test_scale_one_and_determinism(self, workdir):
        simulate(workdir, frames=2)
        d = workdir
        main(["fit", "--blur", str(d / "blur.sfrm"), "--events", str(d / "ev.sevt"),
              "--config", str(d / "small.cfg"), "--out-field", str(d / "f.sfld")])
        base = ["render", "--field", str(d / "f.sfld"), "--blur", str(d / "blur.sfrm"), "--fps",
                "12.4"]
        assert main(base + ["--out-dir", str(d / "a")]) == 0
        assert main(base + ["--scale", "1", "--out-dir", str(d / "b")]) == 0
        a, b = io.frame_paths(d / "a"), io.frame_paths(d / "b")
        assert len(a) == 12  # round(12.4 * 1 s)
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
        assert main(base + ["--scale", "2", "--out-dir", str(d / "c")]) == 0
        assert io.read_frame(io.frame_paths(d / "c")[0]).resolution == (24, 64)

    def test_explicit_timestamps(self, workdir):
        simulate(workdir, frames=1)
        d = workdir
        main(["fit", "--blur", str(d / "blur.sfrm"), "--events", str(d / "ev.sevt"),
              "--out-field", str(d / "f.sfld")])
        assert main(["render", "--field", str(d / "f.sfld"), "--blur", str(d / "blur.sfrm"),
                     "--timestamps=-0.25,0,0.25", "--out-dir", str(d / "t")]) == 0
        ts = [io.read_frame(p).t for p in io.frame_paths(d / "t")]
        assert ts == [-0.25, 0.0, 0.25]
        assert main(["render", "--field", str(d / "f.sfld"), "--blur", str(d / "blur.sfrm"),
                     "--timestamps", "0.9", "--out-dir", str(d / "u")]) == 1


class TestEdi:
    def test_zero_events_copy_blur(self, workdir):
        simulate(workdir, "static.cfg", frames=1)
        d = workdir
        assert main(["edi", "--blur", str(d / "blur.sfrm"), "--events", str(d / "ev.sevt"),
                     "--threshold", "0.2", "--fps", "5", "--out-dir", str(d / "e")]) == 0
        B = io.read_frame(d / "blur.sfrm").data
        for p in io.frame_paths(d / "e"):
            np.testing.assert_array_equal(io.read_frame(p).data, B)

    def test_matches_library(self, workdir):
        simulate(workdir, frames=1)
        d = workdir
        main(["edi", "--blur", str(d / "blur.sfrm"), "--events", str(d / "ev.sevt"),
              "--threshold", "0.2", "--fps", "10", "--out-dir", str(d / "e")])
        blur, ev = io.read_frame(d / "blur.sfrm"), io.read_events(d / "ev.sevt")
        ref = edi_reconstruct(blur, ev, 0.2, ev.window.uniform_timestamps(10))
        got = [io.read_frame(p) for p in io.frame_paths(d / "e")]
        for g, r in zip(got, ref):
            np.testing.assert_array_equal(g.data, r.data.astype(np.float32))

    @pytest.mark.parametrize("thr", ["0", "-0.1"])
    def test_bad_threshold(self, workdir, thr):
        simulate(workdir, frames=1)
        rc = main(["edi", "--blur", str(workdir / "blur.sfrm"), "--events",
                   str(workdir / "ev.sevt"), "--threshold", thr, "--out-dir",
                   str(workdir / "e")])
        assert rc == 2


class TestEval:
    def test_identical_dirs(self, workdir):
        simulate(workdir, frames=4)
        d = workdir
        assert main(["eval", "--pred-dir", str(d / "truth"), "--truth-dir", str(d / "truth"),
                     "--out", str(d / "r.csv")]) == 0
        rows = (d / "r.csv").read_text().strip().split("\n")
        assert rows[0] == "frame_index,t,mse,psnr,ssim"
        assert len(rows) == 4 + 1 + 1
        assert rows[-1].split(",")[4] == "1.0" and rows[-1].split(",")[3] == "inf"

    def test_count_mismatch(self, workdir):
        simulate(workdir, frames=3, tag="a")
        simulate(workdir, frames=4, tag="b")
        rc = main(["eval", "--pred-dir", str(workdir / "trutha"), "--truth-dir",
                   str(workdir / "truthb"), "--out", str(workdir / "r.csv")])
        assert rc == 1


def test_usage_errors_exit_2(tmp_path):
    assert main([]) == 2
    assert main(["render", "--field", "x"]) == 2
    assert main(["simulate", "--out-events", "e", "--out-blur", "b", "--frames", "0"]) == 2


def test_missing_file_exits_1(tmp_path):
    assert main(["render", "--field", str(tmp_path / "nope"), "--blur", "b", "--out-dir",
                 str(tmp_path)]) == 1


def test_bad_config_exits_1(tmp_path):
    (tmp_path / "c.cfg").write_text("bogus = 1\n")
    assert main(["simulate", "--config", str(tmp_path / "c.cfg"), "--out-events", "e",
                 "--out-blur", "b"]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "spikingblur", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
