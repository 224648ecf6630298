import numpy as np
import pytest

from spikingblur.baseline import edi_reconstruct, repeated_blur
from spikingblur.core import EventStream, ExposureWindow, Frame
from spikingblur.simulator import SceneSpec, ThresholdPair, sample_video, simulate_events
from spikingblur.spikerep import SpikingField

WIN = ExposureWindow(1.0)


def test_zero_events_reproduce_blur(rng):
    B = Frame(rng.uniform(size=(5, 6)))
    seq = edi_reconstruct(B, EventStream((5, 6), WIN), 0.2, WIN.uniform_timestamps(7))
    for f in seq:
        np.testing.assert_array_equal(f.data, B.data)


def test_zero_events_any_window(rng):
    win = ExposureWindow(0.37)
    B = Frame(rng.uniform(size=(3, 3)))
    seq = edi_reconstruct(B, EventStream((3, 3), win), 0.2, win.uniform_timestamps(3))
    for f in seq:
        np.testing.assert_array_equal(f.data, B.data)


def test_single_event_hand_solution():
    # L0 (0.5 + 0.5 * 2) = B  =>  L0 = B / 1.5
    ev = EventStream((1, 1), WIN, [0], [0], [0.0], [1])
    seq = edi_reconstruct(Frame([[0.375]]), ev, np.log(2), [-0.25, 0.0, 0.25])
    assert [f.data[0, 0] for f in seq] == pytest.approx([0.25, 0.5, 0.5], abs=1e-15)


def test_event_counts_at_frame_time(rng):
    ev = EventStream.from_arrays((1, 2), WIN, [0, 0, 1], [0, 0, 0], [-0.3, 0.2, 0.0],
                                 [1, -1, -1])
    B = np.array([[0.3, 0.6]])
    c = 0.1
    seq = edi_reconstruct(Frame(B), ev, c, [-0.4, 0.0, 0.3], clamp=False)
    # pixel 0: E = 0 on [-.5,-.3), 1 on [-.3,.2), 0 on [.2,.5]
    norm0 = 0.2 + 0.5 * np.exp(c) + 0.3
    L0 = B[0, 0] / norm0
    np.testing.assert_allclose([f.data[0, 0] for f in seq], [L0, L0 * np.exp(c), L0])
    norm1 = 0.5 + 0.5 * np.exp(-c)
    np.testing.assert_allclose([f.data[0, 1] for f in seq],
                               np.array([1, np.exp(-c), np.exp(-c)]) * B[0, 1] / norm1)


def test_mean_equals_blur(rng):
    ev = EventStream.from_arrays((2, 2), WIN, rng.integers(0, 2, 30), rng.integers(0, 2, 30),
                                 rng.uniform(-0.5, 0.5, 30), rng.choice([-1, 1], 30))
    B = rng.uniform(0.1, 0.3, (2, 2))
    for y in range(2):
        for x in range(2):
            sel = (ev.x == x) & (ev.y == y)
            edges = np.r_[WIN.start, np.sort(ev.t[sel]), WIN.end]
            mids = 0.5 * (edges[:-1] + edges[1:])
            seq = edi_reconstruct(Frame(B), ev, 0.05, mids, clamp=False)
            mean = np.sum(seq.stack()[:, y, x] * np.diff(edges)) / WIN.T
            assert mean == pytest.approx(B[y, x], abs=1e-14)


def test_single_step_scene():
    f = SpikingField(WIN, [[[-0.5, 0.0, 0.5]]], [[[0.0, 0.0]]], [[[0.25, 0.5]]], [[0.0]])
    spec = SceneSpec("spiking-field-playback", (1, 1), WIN, field=f)
    thr = ThresholdPair(np.log(2) - 1e-9, -0.2)
    ev = simulate_events(spec, thr, epsilon_floor=1e-12)
    ts = WIN.uniform_timestamps(30)
    seq = edi_reconstruct(Frame(f.integral_mean()), ev, np.log(2), ts)
    truth = sample_video(spec, ts)
    assert np.mean((seq.stack() - truth.stack()) ** 2) <= 1e-4


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        edi_reconstruct(Frame([[0.5]]), EventStream((1, 1), WIN), 0.0, [0.0])


def test_repeated_blur():
    seq = repeated_blur(Frame([[0.4]]), [-0.1, 0.1])
    assert len(seq) == 2 and seq[1].data[0, 0] == 0.4
