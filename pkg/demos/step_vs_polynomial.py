"""Why piecewise-linear segments: a sharp step in a single pixel.

A pixel jumps from 0.2 to 0.8 mid-exposure. A spiking fit places a keypoint
at the jump and reproduces it exactly; a degree-10 polynomial fitted to the
same samples rings around the discontinuity.

Run: python demos/step_vs_polynomial.py
"""

import numpy as np

from spikingblur import ExposureWindow, Frame, FrameSequence, RenderRequest
from spikingblur import fit_supervised, render_video

window = ExposureWindow(1.0)
ts = window.uniform_timestamps(101)
signal = np.where(ts >= 0.05, 0.8, 0.2)
blurry = Frame([[signal.mean()]])  # close enough for a demo; the fit enforces it exactly

field, _ = fit_supervised(blurry, FrameSequence.from_array(signal[:, None, None], ts))
spiking = render_video(field, blurry, RenderRequest(ts)).stack()[:, 0, 0]
poly = np.polynomial.Polynomial.fit(ts, signal, 10)(ts)

print("keypoints:", np.round(field.keypoints[0, 0], 4))
print(f"spiking    max error {np.max(np.abs(spiking - signal)):.3e}")
print(f"polynomial max error {np.max(np.abs(poly - signal)):.3e}")
