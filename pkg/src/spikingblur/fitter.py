"""Direct fitting of spiking fields to a blurry image plus frames or events.

Two objectives are supported:

``supervised``
    Mean pointwise loss (L1 or L2) between the clamped rendered intensity and
    sampled sharp frames.
``event-only``
    Log-intensity jumps across event bursts should equal the signed event
    count times a per-event threshold, plus an L1 penalty on jumps at
    keypoints with no event support.

In both cases the per-pixel offset ``c`` is never a free variable: it is
recomputed in closed form from the other parameters, so every iterate
reproduces the blurry image exactly.  Optimisation alternates between a
closed-form solve for slopes and intercepts with keypoints fixed, and a
derivative-free search over keypoint positions (a scan over candidate
positions followed by golden-section refinement).  Pixels are independent
and are processed as one vectorised batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ConfigError, EventStream, Frame, FrameSequence
from .spikerep import (
    KernelField,
    SpikingField,
    keypoints_from_widths,
    neighborhoods,
    segment_index,
    width_fractions,
    widths_from_keypoints,
)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
SEGMENT_TIE = 1e-10
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class FitConfig:
    """Optimiser settings.

    ``c_thr`` is the log-intensity change assumed per event (0.2 when unset);
    ``delta`` is the half-width, in seconds, of the bracket used to read a
    jump around an event burst (``1e-4 * T`` when unset).
    """

    mode: str = "supervised"
    n: int = 10
    k: int = 1
    outer_iters: int = 4
    inner_iters: int = 30
    step_size: float = 0.05
    loss: str = "L1"
    event_weight: float = 1.0
    smoothness_weight: float = 0.05
    seed: int = 0
    tol: float = 1e-12
    c_thr: Optional[float] = None
    epsilon: float = 1e-3
    delta: Optional[float] = None
    freeze_keypoints: bool = False

    def __post_init__(self):
        if self.mode not in ("supervised", "event-only"):
            raise ConfigError(f"unknown fit mode {self.mode!r}")
        if self.loss not in ("L1", "L2"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError("k must be an odd positive integer")
        if self.event_weight < 0 or self.smoothness_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.tol > 0:
            raise ConfigError("tolerance must be positive")
        if self.outer_iters < 0 or self.inner_iters < 0:
            raise ConfigError("iteration counts must be non-negative")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.c_thr is not None and not self.c_thr > 0:
            raise ConfigError("c_thr must be positive")

    @property
    def threshold(self) -> float:
        return 0.2 if self.c_thr is None else float(self.c_thr)

    def bracket(self, T: float) -> float:
        return 1e-4 * T if self.delta is None else float(self.delta)


@dataclass
class FitReport:
    losses: list = field(default_factory=list)
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    @property
    def iterations(self) -> int:
        return len(self.losses)

    def to_csv(self) -> str:
        lines = ["iteration,loss"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class FrameSamples:
    """Sharp samples ``values[p, j]`` of pixel ``p`` at time ``times[j]``."""

    times: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class EventBursts:
    """Per-pixel event bursts, padded to a common count.

    ``t_minus``/``t_plus`` bracket each burst, ``net`` is its signed event
    count and ``mask`` marks real (non-padding) entries; all have shape
    ``(P, C)``.
    """

    t_minus: np.ndarray
    t_plus: np.ndarray
    net: np.ndarray
    mask: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return np.where(self.mask, 0.5 * (self.t_minus + self.t_plus), np.nan)


def event_bursts(events: EventStream, delta: float) -> EventBursts:
    """Group each pixel's events into bursts separated by more than ``2 * delta``."""
    h, w = events.resolution
    P = h * w
    if len(events) == 0:
        z = np.zeros((P, 0))
        return EventBursts(z, z, z, z.astype(bool))
    pix = events.pixel_index()
    order = np.lexsort((events.t, pix))
    pix, t, p = pix[order], events.t[order], events.p[order].astype(np.float64)
    new = np.ones(len(t), dtype=bool)
    new[1:] = (pix[1:] != pix[:-1]) | (np.diff(t) > 2 * delta)
    starts = np.flatnonzero(new)
    b_pix = pix[starts]
    b_t0 = t[starts]
    b_t1 = np.maximum.reduceat(t, starts)
    b_net = np.add.reduceat(p, starts)
    # position of each burst within its pixel
    first_of_pixel = np.ones(len(starts), dtype=bool)
    first_of_pixel[1:] = b_pix[1:] != b_pix[:-1]
    group_start = np.maximum.accumulate(np.where(first_of_pixel, np.arange(len(starts)), 0))
    slot = np.arange(len(starts)) - group_start
    C = int(slot.max()) + 1
    T = events.T
    tm = np.zeros((P, C))
    tp = np.zeros((P, C))
    net = np.zeros((P, C))
    mask = np.zeros((P, C), dtype=bool)
    tm[b_pix, slot] = np.maximum(b_t0 - delta, -0.5 * T)
    tp[b_pix, slot] = np.minimum(b_t1 + delta, 0.5 * T)
    net[b_pix, slot] = b_net
    mask[b_pix, slot] = True
    return EventBursts(tm, tp, net, mask)


# ---------------------------------------------------------------------------
# model pieces shared by both objectives


def _segment_terms(kp, T):
    """Per-segment mean weights: ``M_i`` for slopes and ``W_i`` for intercepts."""
    lo, hi = kp[..., :-1], kp[..., 1:]
    W = (hi - lo) / T
    return W * 0.5 * (hi + lo), W


def _design(kp, times, T, nbhd=None):
    """Design matrix mapping parameters to ``v - B`` at ``times``.

    ``kp`` is ``(P, n+1)``; ``times`` is ``(J,)`` or ``(P, J)``.  Columns are
    ``[slopes, intercepts]`` (per tap in kernel mode, taps major).
    """
    P, n1 = kp.shape
    n = n1 - 1
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (P,) + np.shape(times)[-1:])
    seg = segment_index(kp[:, None, :], times)
    onehot = (seg[..., None] == np.arange(n)).astype(np.float64)
    M, W = _segment_terms(kp, T)
    A = np.concatenate(
        [onehot * times[..., None] - M[:, None, :], onehot - W[:, None, :]], axis=-1
    )
    if nbhd is not None:
        A = (A[:, :, None, :] * nbhd[:, None, :, None]).reshape(P, times.shape[1], -1)
    return A


def _ridge_solve(A, z, weights=None):
    """Batched minimum-norm least squares ``min ||A theta - z||`` with a tiny ridge."""
    P, J, p = A.shape
    if weights is not None:
        sw = np.sqrt(weights)
        A = A * sw[..., None]
        z = z * sw
    if p <= J:
        G = np.einsum("pji,pjk->pik", A, A)
        lam = 1e-13 * np.trace(G, axis1=1, axis2=2) / p + 1e-300
        G = G + lam[:, None, None] * np.eye(p)
        rhs = np.einsum("pji,pj->pi", A, z)
        return np.linalg.solve(G, rhs[..., None])[..., 0]
    G = np.einsum("pji,pki->pjk", A, A)
    lam = 1e-13 * np.trace(G, axis1=1, axis2=2) / J + 1e-300
    G = G + lam[:, None, None] * np.eye(J)
    alpha = np.linalg.solve(G, z[..., None])[..., 0]
    return np.einsum("pji,pj->pi", A, alpha)


def _segment_lstsq(kp, times, Y, B, T, weights=None, ridge=1e-12):
    """Blur-constrained least squares for scalar-mode slopes and intercepts.

    Each segment gets an ordinary straight-line fit to the samples it holds;
    a single Lagrange multiplier then shifts the fits so that the temporal
    mean of the mapping equals ``B``.  Times are measured from each segment's
    midpoint, where the mean constraint only involves the intercepts.  The
    tiny ``ridge`` makes segments with fewer than two samples absorb the
    constraint along their cost-free directions.

    Returns ``(slopes, intercepts, values)`` with ``values`` the unclamped
    fit at ``times``; the offset ``c`` of the solution is zero up to rounding.
    """
    P, n1 = kp.shape
    n = n1 - 1
    J = len(times)
    seg = segment_index(kp[:, None, :], times[None, :])
    mid = 0.5 * (kp[:, :-1] + kp[:, 1:])
    W = np.diff(kp, axis=1) / T
    tau = times[None, :] - np.take_along_axis(mid, seg, axis=1)
    flat = (seg + n * np.arange(P)[:, None]).ravel()
    if weights is None:
        wts = np.ones((P, J))
    else:
        wts = weights / np.max(weights, axis=1, keepdims=True)

    def bsum(v):
        return np.bincount(flat, weights=(wts * v).ravel(), minlength=P * n).reshape(P, n)

    S0, S1, S2 = bsum(1.0), bsum(tau), bsum(tau * tau)
    Hy, Hty = bsum(Y), bsum(tau * Y)
    # S0*S2 - S1^2 via centred second moments, free of cancellation
    centre = np.where(S0 > 0, S1 / np.where(S0 > 0, S0, 1.0), 0.0)
    dev = tau - np.take_along_axis(centre, seg, axis=1)
    spread = bsum(dev * dev)
    g11, g12, g22 = S2 + ridge, S1, S0 + ridge
    det = S0 * spread + ridge * (S0 + S2) + ridge * ridge
    slope0 = (g22 * Hty - g12 * Hy) / det
    level0 = (g11 * Hy - g12 * Hty) / det
    # G^{-1} a with a = (0, W)
    ga_slope = -g12 * W / det
    ga_level = g11 * W / det
    mu = (np.sum(W * level0, axis=1) - B) / np.sum(W * ga_level, axis=1)
    slope = slope0 - mu[:, None] * ga_slope
    level = level0 - mu[:, None] * ga_level
    values = np.take_along_axis(slope, seg, axis=1) * tau + np.take_along_axis(level, seg, axis=1)
    return slope, level - slope * mid, values


def _split(theta, n, K):
    t = theta.reshape(theta.shape[0], K, 2 * n)
    m, b = t[..., :n], t[..., n:]
    if K == 1:
        return m[:, 0], b[:, 0]
    return m, b


def _offset(kp, m, b, B, T, nbhd=None):
    M, W = _segment_terms(kp, T)
    if nbhd is None:
        return B - np.sum(m * M + b * W, axis=-1)
    tap_means = np.sum(m * M[:, None, :] + b * W[:, None, :], axis=-1)
    return B - np.sum(tap_means * nbhd, axis=-1)


def _values(kp, m, b, B, T, times):
    """Unclamped scalar-mode values at ``times`` (``(J,)`` or ``(P, J)``)."""
    P = kp.shape[0]
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (P,) + np.shape(times)[-1:])
    seg = segment_index(kp[:, None, :], times)
    c = _offset(kp, m, b, B, T)
    ms = np.take_along_axis(m, seg, axis=1)
    bs = np.take_along_axis(b, seg, axis=1)
    return c[:, None] + ms * times + bs


def _gaps(kp, m, b):
    """Jump ``right - left`` at each interior keypoint, shape ``(P, n-1)``."""
    tk = kp[:, 1:-1]
    return (m[:, 1:] * tk + b[:, 1:]) - (m[:, :-1] * tk + b[:, :-1])


def _pointwise(r, kind):
    if kind == "L1":
        return np.abs(r), np.sign(r)
    return r * r, 2.0 * r


def _chain_gradient(raw, kp, m, b, T, times, g, gap_sign=None):
    """Gradient of ``sum(g * v(times)) [+ sum(gap_sign * gaps)]`` w.r.t. all parameters.

    ``g`` holds ``dloss/dv`` at each time; the dependence of ``c`` on every
    parameter is included.  Returns ``(d_slopes, d_intercepts, d_raw_widths)``.
    """
    P, n = m.shape
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), g.shape)
    seg = segment_index(kp[:, None, :], times)
    onehot = (seg[..., None] == np.arange(n)).astype(np.float64)
    M, W = _segment_terms(kp, T)
    gsum = g.sum(axis=1)
    dm = np.einsum("pj,pji->pi", g * times, onehot) - M * gsum[:, None]
    db = np.einsum("pj,pji->pi", g, onehot) - W * gsum[:, None]
    # dc/dt_k = gap_k / T at interior keypoints
    dt = gsum[:, None] * _gaps(kp, m, b) / T
    if gap_sign is not None:
        tk = kp[:, 1:-1]
        dm[:, 1:] += gap_sign * tk
        dm[:, :-1] -= gap_sign * tk
        db[:, 1:] += gap_sign
        db[:, :-1] -= gap_sign
        dt = dt + gap_sign * (m[:, 1:] - m[:, :-1])
    # t_k = -T/2 + T * sum_{i<k} s_i with s = softmax(raw)
    s = width_fractions(raw)
    G = np.zeros((P, n + 1))
    G[:, 1:-1] = dt
    S = np.concatenate([np.zeros((P, 1)), np.cumsum(s, axis=1)], axis=1)  # S_k, k=0..n
    tail = np.cumsum(G[:, ::-1], axis=1)[:, ::-1]  # tail[j] = sum_{k>=j} G_k
    total = np.sum(G * S, axis=1)
    dr = T * s * (tail[:, 1:] - total[:, None])
    return dm, db, dr


def loss_and_gradient(raw_widths, slopes, intercepts, blurry, observations, config: FitConfig,
                      T: float = 1.0, clamp: bool = True):
    """Objective value and analytic gradient for a batch of pixels.

    Parameters
    ----------
    raw_widths, slopes, intercepts : ndarray, shape (P, n)
    blurry : ndarray, shape (P,)
    observations : FrameSamples or EventBursts
    config : FitConfig
        Supplies the loss kind and, for events, the weights, threshold,
        log floor and bracket.
    T : float
        Exposure length.
    clamp : bool
        Clamp rendered values to ``[0, 1]`` before the supervised loss.

    Returns
    -------
    loss : float
        Mean over pixels of the per-pixel objective.
    grad : dict
        ``slopes``, ``intercepts`` and ``raw_widths`` gradients, each ``(P, n)``.
    """
    raw = np.atleast_2d(np.asarray(raw_widths, dtype=np.float64))
    m = np.atleast_2d(np.asarray(slopes, dtype=np.float64))
    b = np.atleast_2d(np.asarray(intercepts, dtype=np.float64))
    B = np.atleast_1d(np.asarray(blurry, dtype=np.float64))
    for a in (raw, m, b, B):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite parameters")
    P = raw.shape[0]
    kp = keypoints_from_widths(raw, T)
    if isinstance(observations, FrameSamples):
        per_pixel, g = _supervised_terms(kp, m, b, B, T, observations, config.loss, clamp)
        times = observations.times
        gap_sign = None
    else:
        per_pixel, g, times, gap_sign = _event_terms(kp, m, b, B, T, observations, config)
    dm, db, dr = _chain_gradient(raw, kp, m, b, T, times, g / P,
                                 None if gap_sign is None else gap_sign / P)
    return float(np.mean(per_pixel)), {"slopes": dm, "intercepts": db, "raw_widths": dr}


def _supervised_terms(kp, m, b, B, T, obs, kind, clamp=True):
    v = _values(kp, m, b, B, T, obs.times)
    J = v.shape[1]
    vc = np.clip(v, 0.0, 1.0) if clamp else v
    loss, dloss = _pointwise(vc - obs.values, kind)
    if clamp:
        dloss = dloss * ((v > 0.0) & (v < 1.0))
    return loss.mean(axis=1), dloss / J


def _event_terms(kp, m, b, B, T, obs: EventBursts, config: FitConfig):
    times = np.concatenate([obs.t_minus, obs.t_plus], axis=1)
    v = _values(kp, m, b, B, T, times) if times.shape[1] else np.zeros((len(B), 0))
    C = obs.t_minus.shape[1]
    arg = v + config.epsilon
    live = arg > _LOG_FLOOR
    logv = np.log(np.maximum(arg, _LOG_FLOOR))
    rho = logv[:, C:] - logv[:, :C] - config.threshold * obs.net
    loss, dloss = _pointwise(rho, config.loss)
    loss = config.event_weight * np.sum(loss * obs.mask, axis=1)
    dl = config.event_weight * dloss * obs.mask
    dv = live / np.maximum(arg, _LOG_FLOOR)
    g = np.concatenate([-dl * dv[:, :C], dl * dv[:, C:]], axis=1)
    # jumps are only penalised at keypoints that no burst bracket covers
    tk = kp[:, 1:-1]
    supported = np.any(
        obs.mask[:, :, None]
        & (obs.t_minus[:, :, None] < tk[:, None, :])
        & (tk[:, None, :] <= obs.t_plus[:, :, None]),
        axis=1,
    )
    gaps = np.where(supported, 0.0, _gaps(kp, m, b))
    loss = loss + config.smoothness_weight * np.sum(np.abs(gaps), axis=1)
    gap_sign = config.smoothness_weight * np.sign(gaps)
    return loss, g, times, gap_sign


# ---------------------------------------------------------------------------
# keypoint initialisation and search


def _segmentation_keypoints(times, values, n, T):
    """Keypoints from the optimal ``n``-piece least-squares segmentation of samples.

    Dynamic programming over sample index ranges; each keypoint is placed
    midway between the last sample of one piece and the first of the next.
    A negligible cost proportional to the squared piece lengths breaks ties.
    """
    P, J = values.shape
    t = np.asarray(times, dtype=np.float64)
    z = np.zeros(1)
    c0 = np.concatenate([z, np.cumsum(np.ones(J))])
    c1 = np.concatenate([z, np.cumsum(t)])
    c2 = np.concatenate([z, np.cumsum(t * t)])
    zP = np.zeros((P, 1))
    cy = np.concatenate([zP, np.cumsum(values, axis=1)], axis=1)
    cty = np.concatenate([zP, np.cumsum(values * t, axis=1)], axis=1)
    cyy = np.concatenate([zP, np.cumsum(values * values, axis=1)], axis=1)
    a = np.arange(J)[:, None]
    e = np.arange(J)[None, :] + 1  # exclusive end
    valid = e > a
    S0 = np.where(valid, c0[e] - c0[a], 1.0)
    S1 = np.where(valid, c1[e] - c1[a], 0.0)
    S2 = np.where(valid, c2[e] - c2[a], 1.0)
    Sy = cy[:, e] - cy[:, a]
    Sty = cty[:, e] - cty[:, a]
    Syy = cyy[:, e] - cyy[:, a]
    det = S0 * S2 - S1 * S1
    single = det <= 1e-300
    det = np.where(single, 1.0, det)
    fit = (Sy * Sy * S2 - 2.0 * Sy * Sty * S1 + S0 * Sty * Sty) / det
    fit_single = Sy * Sy / S0
    cost = np.maximum(Syy - np.where(single, fit_single, fit), 0.0)
    # tie-break between equally good segmentations in favour of balanced
    # pieces, so samples do not end up alone in slope-less segments
    tie = SEGMENT_TIE * (np.mean(values * values, axis=1) + 1e-300)
    cost = cost + tie[:, None, None] * (S0 * S0)
    cost = np.where(valid, cost, np.inf)  # (P, a, end-1)

    D = cost[:, 0, :].copy()  # best cost covering samples [0, e) with one piece
    back = np.zeros((n, P, J), dtype=np.int64)
    for piece in range(1, n):
        # new piece covers [a, e) with a >= 1; previous pieces cover [0, a)
        cand = D[:, :-1, None] + cost[:, 1:, :]  # (P, a-1, e-1)
        arg = np.argmin(cand, axis=1)
        D = np.take_along_axis(cand, arg[:, None, :], axis=1)[:, 0, :]
        back[piece] = arg + 1
    starts = np.zeros((P, n), dtype=np.int64)
    end = np.full(P, J - 1)
    rows = np.arange(P)
    for piece in range(n - 1, 0, -1):
        a = back[piece, rows, end]
        starts[:, piece] = a
        end = a - 1
    kp = np.empty((P, n + 1))
    kp[:, 0], kp[:, -1] = -0.5 * T, 0.5 * T
    kp[:, 1:-1] = 0.5 * (t[starts[:, 1:] - 1] + t[starts[:, 1:]])
    return kp


def _event_keypoints(bursts: EventBursts, n, T):
    """Keypoints at the centres of the strongest bursts, remaining ones bisecting gaps."""
    P = bursts.mask.shape[0]
    kp = np.empty((P, n + 1))
    centers = bursts.centers
    strength = np.where(bursts.mask, np.abs(bursts.net), -1.0)
    for p in range(P):
        order = np.lexsort((centers[p], -strength[p]))
        chosen = [centers[p, i] for i in order[: n - 1] if bursts.mask[p, i]]
        pts = sorted([-0.5 * T, 0.5 * T] + chosen)
        while len(pts) < n + 1:
            i = int(np.argmax(np.diff(pts)))
            pts.insert(i + 1, 0.5 * (pts[i] + pts[i + 1]))
        kp[p] = pts
        kp[p, 0], kp[p, -1] = -0.5 * T, 0.5 * T
    return kp


def _moved(raw, k, pos, T):
    kp = keypoints_from_widths(raw, T)
    lo = np.nextafter(kp[:, k - 1], np.inf)
    hi = np.nextafter(kp[:, k + 1], -np.inf)
    kp[:, k] = np.clip(pos, lo, hi)
    return widths_from_keypoints(kp)


def _golden(raw, loss, state, evaluate, k, a, b, iters, T, margin=0.0):
    """Golden-section search for keypoint ``k`` of each pixel inside ``[a, b]``.

    Pixels without a finite, non-empty interval are skipped; every probe that
    improves a pixel's loss is remembered and the best one is kept.
    """
    kp = keypoints_from_widths(raw, T)
    a = np.maximum(a, kp[:, k - 1])
    b = np.minimum(b, kp[:, k + 1])
    idx = np.flatnonzero(np.isfinite(a) & np.isfinite(b) & (b > a))
    if not len(idx) or iters <= 0:
        return
    a, b = a[idx], b[idx]
    base = raw[idx].copy()
    best_L, best_raw, best_state = loss[idx].copy(), base.copy(), state[idx].copy()

    def probe(x):
        r = _moved(base, k, x, T)
        L, st = evaluate(r, idx)
        better = L < best_L
        best_L[better], best_raw[better], best_state[better] = L[better], r[better], st[better]
        return L

    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = probe(x1), probe(x2)
    for _ in range(iters):
        left = f1 <= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x_new = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
        f_new = probe(x_new)
        x2, f2, x1, f1 = (
            np.where(left, x1, x_new), np.where(left, f1, f_new),
            np.where(left, x_new, x2), np.where(left, f_new, f2),
        )
    better = best_L < loss[idx] - margin
    sel = idx[better]
    raw[sel], loss[sel], state[sel] = best_raw[better], best_L[better], best_state[better]


def _keypoint_search(raw, loss, state, evaluate, candidates, intervals, current_interval,
                     iters, T, margin=0.0):
    """Round-robin search over interior keypoint positions.

    Every keypoint is first refined by golden-section search inside the
    interval around its current position.  Then, for each keypoint, every
    candidate position strictly between its neighbours is scanned, followed
    by refinement inside the interval of the winning candidate.  A move is
    kept only if it lowers the pixel's loss by more than ``margin``, so
    losses are non-increasing and keypoints do not drift on round-off.  ``raw``, ``loss`` and ``state`` are
    updated in place and returned.
    """
    P, n = raw.shape
    cand = np.broadcast_to(candidates, (P, candidates.shape[-1]))
    c_lo = np.broadcast_to(intervals[0], cand.shape)
    c_hi = np.broadcast_to(intervals[1], cand.shape)
    # settle every keypoint inside its own gap first: a scan against a
    # half-settled state tends to trade a data segment for an empty one
    for k in range(1, n):
        lo, hi = current_interval(keypoints_from_widths(raw, T)[:, k])
        _golden(raw, loss, state, evaluate, k, lo, hi, iters, T, margin)
    for k in range(1, n):
        moved = np.zeros(P, dtype=bool)
        best_lo = np.full(P, np.nan)
        best_hi = np.full(P, np.nan)
        for j in range(cand.shape[1]):
            kp = keypoints_from_widths(raw, T)
            pos = cand[:, j]
            ok = np.isfinite(pos) & (pos > kp[:, k - 1]) & (pos < kp[:, k + 1])
            idx = np.flatnonzero(ok)
            if not len(idx):
                continue
            new_raw = _moved(raw[idx], k, pos[idx], T)
            L, st = evaluate(new_raw, idx)
            better = L < loss[idx] - margin
            sel = idx[better]
            raw[sel], loss[sel], state[sel] = new_raw[better], L[better], st[better]
            best_lo[sel], best_hi[sel] = c_lo[sel, j], c_hi[sel, j]
            moved[sel] = True
        if moved.any():
            _golden(raw, loss, state, evaluate, k, best_lo, best_hi, iters, T, margin)
    return raw, loss, state


# ---------------------------------------------------------------------------
# public fitting entry points


def _blur_values(blurry) -> np.ndarray:
    B = blurry.data if isinstance(blurry, Frame) else np.asarray(blurry, dtype=np.float64)
    if not np.all(np.isfinite(B)):
        raise ValueError("blurry image must be finite")
    return B


def fit_supervised(blurry: Frame, targets: FrameSequence, config: FitConfig = FitConfig(),
                   window=None, init_keypoints=None):
    """Fit a spiking (or kernel) field to sharp frames sampled during the exposure.

    Parameters
    ----------
    blurry : Frame
    targets : FrameSequence
        Sharp frames with timestamps inside the exposure window.
    config : FitConfig
    window : ExposureWindow or float, optional
        Exposure; defaults to the smallest symmetric window covering the
        target timestamps rounded up to 1 s.
    init_keypoints : ndarray, shape (h, w, n + 1), optional
        Starting keypoints; combine with ``config.freeze_keypoints`` to fit
        slopes and intercepts only.

    Returns
    -------
    field : SpikingField or KernelField
    report : FitReport
    """
    from .core import ExposureWindow

    B = _blur_values(blurry)
    if len(targets) == 0:
        raise ValueError("need at least one target frame")
    if targets.resolution != B.shape:
        raise ValueError(f"target resolution {targets.resolution} != blurry {B.shape}")
    Y = targets.stack()
    if not np.all(np.isfinite(Y)):
        raise ValueError("targets must be finite")
    if window is None:
        window = ExposureWindow(1.0)
    elif not isinstance(window, ExposureWindow):
        window = ExposureWindow(float(window))
    T = window.T
    times = targets.timestamps
    window.check(times)

    h, w = B.shape
    P, n, k = h * w, config.n, config.k
    K = k * k
    Bf = B.reshape(P)
    Yf = Y.reshape(len(times), P).T.copy()
    nbhd = neighborhoods(B, k).reshape(P, K) if k > 1 else None

    def evaluate(raw_sub, idx, irls=False):
        kp = keypoints_from_widths(raw_sub, T)
        Yi, Bi = Yf[idx], Bf[idx]
        if nbhd is None:
            m, b, v = _segment_lstsq(kp, times, Yi, Bi, T)
            theta = np.concatenate([m, b], axis=1)
        else:
            A = _design(kp, times, T, nbhd[idx])
            z = Yi - Bi[:, None]
            theta = _ridge_solve(A, z)
            v = Bi[:, None] + np.einsum("pji,pi->pj", A, theta)
        resid = np.clip(v, 0.0, 1.0) - Yi
        L = _pointwise(resid, config.loss)[0].mean(axis=1)
        if irls and config.loss == "L1":
            for _ in range(max(config.inner_iters // 3, 1)):
                wts = 1.0 / np.maximum(np.abs(resid), 1e-9)
                if nbhd is None:
                    m, b, v = _segment_lstsq(kp, times, Yi, Bi, T, wts)
                    cand = np.concatenate([m, b], axis=1)
                else:
                    cand = _ridge_solve(A, z, wts)
                    v = Bi[:, None] + np.einsum("pji,pi->pj", A, cand)
                r2 = np.clip(v, 0.0, 1.0) - Yi
                L2 = np.abs(r2).mean(axis=1)
                better = L2 < L
                theta[better], L[better], resid[better] = cand[better], L2[better], r2[better]
        return L, theta

    if init_keypoints is not None:
        kp0 = np.asarray(init_keypoints, dtype=np.float64)
        if kp0.shape != (h, w, n + 1):
            raise ValueError(f"init_keypoints must have shape {(h, w, n + 1)}, got {kp0.shape}")
        kp0 = kp0.reshape(P, n + 1)
        raw = widths_from_keypoints(kp0)
    elif len(times) >= n and not config.freeze_keypoints:
        raw = widths_from_keypoints(_segmentation_keypoints(times, Yf, n, T))
    else:
        raw = np.zeros((P, n))
    theta = np.zeros((P, 2 * n * K))
    loss = np.abs(np.clip(np.broadcast_to(Bf[:, None], Yf.shape), 0, 1) - Yf)
    loss = (loss if config.loss == "L1" else loss ** 2).mean(axis=1)

    edges = np.concatenate([[-0.5 * T], times, [0.5 * T]])
    mids = 0.5 * (edges[:-1] + edges[1:])

    def current_interval(pos):
        i = np.clip(np.searchsorted(edges, pos, side="right"), 1, len(edges) - 1)
        return edges[i - 1].copy(), edges[i].copy()

    report = FitReport()
    all_idx = np.arange(P)
    for _ in range(config.outer_iters):
        L, th = evaluate(raw, all_idx, irls=True)
        better = L < loss
        theta[better], loss[better] = th[better], L[better]
        if not config.freeze_keypoints and n > 1:
            raw, loss, theta = _keypoint_search(
                raw, loss, theta, evaluate, mids[None, :],
                (edges[None, :-1], edges[None, 1:]), current_interval,
                config.inner_iters, T, config.tol,
            )
        report.losses.append(float(np.mean(loss)))
        if _converged(report.losses, config.tol):
            report.converged = True
            break

    kp = keypoints_from_widths(raw, T).reshape(h, w, n + 1)
    m, b = _split(theta, n, K)
    if nbhd is None:
        c = _offset(kp.reshape(P, -1), m, b, Bf, T)
        field = SpikingField(window, kp, m.reshape(h, w, n), b.reshape(h, w, n), c.reshape(h, w))
    else:
        c = _offset(kp.reshape(P, -1), m, b, Bf, T, nbhd)
        shape = (h, w, k, k, n)
        field = KernelField(window, kp, m.reshape(shape), b.reshape(shape), c.reshape(h, w))
    return field, report


def _converged(losses, tol):
    if not losses:
        return False
    if losses[-1] <= 1e-30:
        return True
    if len(losses) < 2:
        return False
    return losses[-2] - losses[-1] <= tol * max(abs(losses[-2]), 1e-300)


def _chain_solution(kp, B, bursts: EventBursts, config: FitConfig, T):
    """Piecewise-constant levels whose log jumps match the bursts each keypoint straddles.

    Each burst is assigned to the first interior keypoint inside its bracket;
    the jump at that keypoint is ``c_thr`` times the summed signed counts.  The
    overall level then follows from the blur constraint in closed form.
    """
    P, n1 = kp.shape
    n = n1 - 1
    tk = kp[:, 1:-1]
    inside = (bursts.t_minus[:, :, None] < tk[:, None, :]) & (tk[:, None, :] <= bursts.t_plus[:, :, None])
    inside &= bursts.mask[:, :, None]
    has = inside.any(axis=2)
    first = np.argmax(inside, axis=2)
    jumps = np.zeros((P, n - 1))
    rows = np.repeat(np.arange(P)[:, None], inside.shape[1], axis=1)
    np.add.at(jumps, (rows[has], first[has]), config.threshold * bursts.net[has])
    logs = np.concatenate([np.zeros((P, 1)), np.cumsum(jumps, axis=1)], axis=1)
    W = np.diff(kp, axis=1) / T
    eps = config.epsilon
    scale = (B + eps) / np.sum(W * np.exp(logs), axis=1)
    levels = scale[:, None] * np.exp(logs) - eps
    b = np.where(np.any(jumps != 0, axis=1)[:, None], levels - B[:, None], 0.0)
    m = np.zeros_like(b)
    return m, b


def fit_event_only(blurry: Frame, events: EventStream, config: FitConfig = None):
    """Fit a spiking field from a blurry image and its events alone.

    Returns
    -------
    field : SpikingField
    report : FitReport
    """
    from .core import validate_stream

    if config is None:
        config = FitConfig(mode="event-only")
    if config.k != 1:
        raise ConfigError("kernel mode is only supported for supervised fitting")
    B = _blur_values(blurry)
    if events.resolution != B.shape:
        raise ValueError(f"event resolution {events.resolution} != blurry {B.shape}")
    problems = validate_stream(events)
    if problems:
        raise ValueError(f"invalid event stream: {problems[0].message}")
    window = events.window
    T = window.T
    h, w = B.shape
    P, n = h * w, config.n
    Bf = B.reshape(P)
    delta = config.bracket(T)
    bursts = event_bursts(events, delta)

    def sub(idx):
        return EventBursts(bursts.t_minus[idx], bursts.t_plus[idx], bursts.net[idx],
                           bursts.mask[idx])

    def objective(kp, m, b, idx):
        return _event_terms(kp, m, b, Bf[idx], T, sub(idx), config)[0]

    def evaluate(raw_sub, idx):
        kp = keypoints_from_widths(raw_sub, T)
        m, b = _chain_solution(kp, Bf[idx], sub(idx), config, T)
        return objective(kp, m, b, idx), np.concatenate([m, b], axis=1)

    if bursts.mask.shape[1]:
        raw = widths_from_keypoints(_event_keypoints(bursts, n, T))
    else:
        raw = np.zeros((P, n))
    all_idx = np.arange(P)
    theta = np.zeros((P, 2 * n))
    loss = objective(keypoints_from_widths(raw, T), theta[:, :n], theta[:, n:], all_idx)

    centers = bursts.centers

    def current_interval(pos):
        inside = bursts.mask & (bursts.t_minus < pos[:, None]) & (pos[:, None] <= bursts.t_plus)
        j = np.argmax(inside, axis=1)
        ok = inside.any(axis=1)
        rows = np.arange(P)
        lo = np.where(ok, bursts.t_minus[rows, j], np.nan)
        hi = np.where(ok, bursts.t_plus[rows, j], np.nan)
        return lo, hi

    report = FitReport()
    for _ in range(config.outer_iters):
        L, th = evaluate(raw, all_idx)
        better = L < loss
        theta[better], loss[better] = th[better], L[better]
        theta, loss = _refine_event_params(raw, theta, loss, Bf, T, bursts, config)
        if not config.freeze_keypoints and n > 1 and centers.shape[1]:
            raw, loss, theta = _keypoint_search(
                raw, loss, theta, evaluate, centers,
                (bursts.t_minus, bursts.t_plus), current_interval,
                config.inner_iters, T, config.tol,
            )
        report.losses.append(float(np.mean(loss)))
        if _converged(report.losses, config.tol):
            report.converged = True
            break

    kp = keypoints_from_widths(raw, T)
    m, b = theta[:, :n], theta[:, n:]
    c = _offset(kp, m, b, Bf, T)
    field = SpikingField(window, kp.reshape(h, w, n + 1), m.reshape(h, w, n),
                         b.reshape(h, w, n), c.reshape(h, w))
    return field, report


def _refine_event_params(raw, theta, loss, B, T, bursts, config):
    """Normalised subgradient steps on slopes and intercepts; improving steps only."""
    P, n2 = theta.shape
    n = n2 // 2
    active = np.flatnonzero(bursts.mask.any(axis=1) & (loss > 0))
    if not len(active) or config.inner_iters == 0:
        return theta, loss
    obs = EventBursts(bursts.t_minus[active], bursts.t_plus[active], bursts.net[active],
                      bursts.mask[active])
    r = raw[active]
    th = theta[active].copy()
    cur = loss[active].copy()
    step = np.full(len(active), config.step_size)
    kp = keypoints_from_widths(r, T)
    for _ in range(config.inner_iters):
        m, b = th[:, :n], th[:, n:]
        _, g, times, gap_sign = _event_terms(kp, m, b, B[active], T, obs, config)
        dm, db, _ = _chain_gradient(r, kp, m, b, T, times, g, gap_sign)
        grad = np.concatenate([dm, db], axis=1)
        norm = np.linalg.norm(grad, axis=1)
        norm = np.where(norm > 0, norm, 1.0)
        trial = th - (step / norm)[:, None] * grad
        L = _event_terms(kp, trial[:, :n], trial[:, n:], B[active], T, obs, config)[0]
        better = L < cur
        th[better], cur[better] = trial[better], L[better]
        step = np.where(better, step * 1.5, step * 0.5)
    theta = theta.copy()
    theta[active], loss[active] = th, cur
    return theta, loss
