import numpy as np
import pytest
from skimage.metrics import structural_similarity

from spikingblur.core import Frame, FrameSequence
from spikingblur.metrics import mse, psnr, psnr_from_mse, sequence_metrics, ssim


def frames(rng, count, shape=(16, 20)):
    ts = np.linspace(-0.4, 0.4, count)
    return FrameSequence.from_array(rng.uniform(size=(count,) + shape), ts)


class TestMse:
    def test_identical(self, rng):
        a = rng.uniform(size=(4, 4))
        assert mse(a, a) == 0.0

    def test_extremes(self):
        assert mse(np.zeros((3, 3)), np.ones((3, 3))) == 1.0

    def test_checkerboard(self):
        cb = np.indices((6, 6)).sum(axis=0) % 2
        assert mse(Frame(cb), Frame(1 - cb)) == 1.0

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(2, 5, 5))
        assert mse(a, b) == mse(b, a) >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestPsnr:
    def test_values(self):
        assert psnr_from_mse(0.01) == pytest.approx(20.0)
        assert psnr_from_mse(1.0) == 0.0
        assert psnr(np.ones((2, 2)), np.ones((2, 2))) == float("inf")

    def test_consistent_with_mse(self, rng):
        for _ in range(50):
            a, b = rng.uniform(size=(2, 8, 8))
            assert abs(10 ** (-psnr(a, b) / 10) - mse(a, b)) <= 1e-12
            assert psnr(a, b) == psnr(b, a)


class TestSsim:
    def test_identity(self, rng):
        a = rng.uniform(size=(20, 24))
        assert ssim(a, a) == 1.0

    def test_constants(self):
        assert ssim(np.zeros((12, 12)), np.ones((12, 12))) < 0.05

    def test_small_noise(self, rng):
        a = rng.uniform(size=(32, 32))
        assert ssim(a, a + rng.normal(0, 1e-4, a.shape)) >= 0.999

    def test_matches_reference_implementation(self, rng):
        for _ in range(5):
            a = rng.uniform(size=(25, 31))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
            ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
            assert ssim(a, b) == pytest.approx(ref, abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))


class TestSequence:
    def test_identity(self, rng):
        a = frames(rng, 3)
        assert sequence_metrics(a, a).mean["ssim"] == 1.0

    def test_mean_is_arithmetic(self, rng):
        a, b = frames(rng, 4), frames(rng, 4)
        m = sequence_metrics(a, b)
        assert m.mean["mse"] == pytest.approx(np.mean([mse(x, y) for x, y in zip(a, b)]))
        assert m.mean["ssim"] == pytest.approx(np.mean([ssim(x, y) for x, y in zip(a, b)]))

    def test_mismatch(self, rng):
        with pytest.raises(ValueError):
            sequence_metrics(frames(rng, 3), frames(rng, 4))
        a = frames(rng, 2)
        b = FrameSequence.from_array(a.stack(), a.timestamps + 1e-3)
        with pytest.raises(ValueError):
            sequence_metrics(a, b)
        with pytest.raises(ValueError):
            sequence_metrics(FrameSequence(()), FrameSequence(()))

    def test_csv(self, rng):
        text = sequence_metrics(frames(rng, 3), frames(rng, 3)).to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "frame_index,t,mse,psnr,ssim"
        assert len(lines) == 1 + 3 + 1 and lines[-1].startswith("mean,,")
        assert all(len(line.split(",")) == 5 for line in lines)
