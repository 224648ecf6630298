"""Piecewise-linear ("spiking") intensity fields for event-based motion deblurring.

Each pixel's intensity over the exposure ``[-T/2, T/2]`` is a piecewise-linear
function of time plus an offset chosen so the temporal mean reproduces the
blurry image exactly.  The package simulates events and blur from analytic
scenes, fits fields to a blurry image plus events or sharp samples, and
renders sharp frames at any timestamp and integer spatial scale.
"""

from .baseline import edi_reconstruct, repeated_blur
from .core import (
    ConfigError,
    Event,
    EventHistogram,
    EventStream,
    ExposureWindow,
    Frame,
    FrameSequence,
    Violation,
    slice_by_time,
    validate_stream,
    voxelize,
)
from .fitter import FitConfig, FitReport, fit_event_only, fit_supervised, loss_and_gradient
from .metrics import mse, psnr, sequence_metrics, ssim
from .render import (
    RenderRequest,
    bicubic_upscale,
    render_frame,
    render_superres,
    render_video,
)
from .simulator import (
    SceneSpec,
    ThresholdPair,
    sample_scene,
    sample_video,
    simulate_events,
    synthesize_blur,
)
from .spikerep import (
    KernelField,
    SpikingField,
    SpikingPixel,
    eval_kernel,
    evaluate,
    integral_mean,
    kernel_normalization_constant,
    keypoints_from_widths,
    normalization_constant,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Event",
    "EventHistogram",
    "EventStream",
    "ExposureWindow",
    "FitConfig",
    "FitReport",
    "Frame",
    "FrameSequence",
    "KernelField",
    "RenderRequest",
    "SceneSpec",
    "SpikingField",
    "SpikingPixel",
    "ThresholdPair",
    "Violation",
    "bicubic_upscale",
    "edi_reconstruct",
    "eval_kernel",
    "evaluate",
    "fit_event_only",
    "fit_supervised",
    "integral_mean",
    "kernel_normalization_constant",
    "keypoints_from_widths",
    "loss_and_gradient",
    "mse",
    "normalization_constant",
    "psnr",
    "render_frame",
    "render_superres",
    "render_video",
    "repeated_blur",
    "sample_scene",
    "sample_video",
    "sequence_metrics",
    "simulate_events",
    "slice_by_time",
    "ssim",
    "synthesize_blur",
    "validate_stream",
    "voxelize",
]
