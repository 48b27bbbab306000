"""Binned intensity and lifetime traces, blinking-state segmentation and fits.

Covers the single-emitter workflow: bin the stream into an intensity trace,
split bright and dim periods, build state-resolved decay histograms and fit
them, plus the saturation and emission-spectrum fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import (
    EmptySelection,
    FitDiverged,
    InsufficientPoints,
    InsufficientRange,
    NoPeak,
    Unimodal,
)
from .fitting import FitResult, decay_model, fit_decay_curve, least_squares_fit
from .stream import PhotonStream

DEFAULT_BIN_TIME = 10e-3

LABEL_LOW = 0
LABEL_HIGH = 1
LABEL_EXCLUDED = 2
LABEL_NAMES = {LABEL_LOW: "low", LABEL_HIGH: "high", LABEL_EXCLUDED: "excluded"}

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class IntensityTrace:
    """Photon counts per time bin, both detectors summed."""

    bin_time: float
    counts: np.ndarray
    start_time: float = 0.0

    def __len__(self):
        return int(self.counts.size)

    @property
    def times(self) -> np.ndarray:
        """Bin start times in seconds."""
        return self.start_time + self.bin_time * np.arange(self.counts.size)

    @property
    def rates(self) -> np.ndarray:
        return self.counts / self.bin_time


@dataclass(frozen=True)
class LifetimeTrace:
    """Per-bin mean (or median) photon arrival time after the sync pulse.

    Empty bins hold NaN.
    """

    bin_time: float
    mean_arrival: np.ndarray
    sync_period: float
    start_time: float = 0.0
    statistic: str = "mean"

    def __len__(self):
        return int(self.mean_arrival.size)

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.mean_arrival)


@dataclass(frozen=True)
class StateSegmentation:
    """Bright/dim labels per intensity bin from a two-component mixture.

    ``weights``, ``means`` and ``sigmas`` describe the (low, high) mixture
    components in counts per bin.
    """

    threshold_low: float
    threshold_high: float
    labels: np.ndarray
    bin_time: float
    start_time: float = 0.0
    weights: tuple = (0.5, 0.5)
    means: tuple = (0.0, 0.0)
    sigmas: tuple = (0.0, 0.0)

    def fraction(self, label: int) -> float:
        return float(np.mean(self.labels == label)) if self.labels.size else 0.0


@dataclass(frozen=True)
class DecayHistogram:
    """Photon counts per microtime bin (bin width = microtime resolution)."""

    counts: np.ndarray
    resolution: float
    sync_period: float
    label: str = "all"

    @property
    def times(self) -> np.ndarray:
        return self.resolution * np.arange(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class SpectrumFit:
    cew: float
    fwhm: float
    amplitude: float
    baseline: float
    fit: FitResult = field(repr=False, default=None)


# -- traces ------------------------------------------------------------------------


def _n_bins(duration, bin_time):
    # tolerate float noise such as 0.03 / 0.01 = 2.9999999999999996
    return int(math.ceil(round(duration / bin_time, 9)))


def _bin_index(stream, bin_time, n):
    t = stream.abs_times()[stream.photon_mask()]
    idx = np.floor(t / bin_time).astype(np.int64)
    return np.clip(idx, 0, max(n - 1, 0))


def bin_intensity(stream: PhotonStream, bin_time: float = DEFAULT_BIN_TIME) -> IntensityTrace:
    """Count photons in half-open bins ``[k * bin_time, (k + 1) * bin_time)``.

    The trace has ``ceil(duration / bin_time)`` bins, so a trailing partial
    bin keeps every photon and the counts sum to the photon record count.
    Marker records are ignored.
    """
    if not bin_time > 0:
        raise ValueError(f"bin_time must be positive, got {bin_time}")
    n = _n_bins(stream.header.duration, bin_time)
    idx = _bin_index(stream, bin_time, n)
    counts = np.bincount(idx, minlength=n).astype(np.uint64) if n else np.zeros(0, np.uint64)
    return IntensityTrace(bin_time=float(bin_time), counts=counts)


def mean_arrival_trace(
    stream: PhotonStream, bin_time: float = DEFAULT_BIN_TIME, statistic: str = "mean"
) -> LifetimeTrace:
    """Mean (or median) microtime in seconds of the photons in each bin."""
    if not bin_time > 0:
        raise ValueError(f"bin_time must be positive, got {bin_time}")
    if statistic not in ("mean", "median"):
        raise ValueError("statistic must be 'mean' or 'median'")
    n = _n_bins(stream.header.duration, bin_time)
    idx = _bin_index(stream, bin_time, n)
    micro = stream.microtimes_s()[stream.photon_mask()]
    out = np.full(n, np.nan)
    if statistic == "mean":
        cnt = np.bincount(idx, minlength=n)
        tot = np.bincount(idx, weights=micro, minlength=n)
        nz = cnt > 0
        out[nz] = tot[nz] / cnt[nz]
    else:
        order = np.lexsort((micro, idx))
        idx_s, micro_s = idx[order], micro[order]
        bounds = np.searchsorted(idx_s, np.arange(n + 1))
        for k in np.flatnonzero(np.diff(bounds)):
            out[k] = np.median(micro_s[bounds[k] : bounds[k + 1]])
    return LifetimeTrace(
        bin_time=float(bin_time),
        mean_arrival=out,
        sync_period=stream.header.sync_period,
        statistic=statistic,
    )


# -- segmentation ------------------------------------------------------------------


def _gaussian_mixture(x, max_iter=1000, tol=1e-10):
    """EM for a 1-D two-component Gaussian mixture; returns (w, mu, sigma)."""
    lo, hi = np.percentile(x, [20, 80])
    mu = np.array([lo, hi], dtype=float)
    spread = max(float(np.std(x)), 1e-6)
    sigma = np.array([spread / 2, spread / 2])
    w = np.array([0.5, 0.5])
    floor = max(1e-3 * spread, 1e-6)
    prev = -np.inf
    for _ in range(max_iter):
        z = (x[:, None] - mu) / sigma
        logp = np.log(w) - np.log(sigma) - 0.5 * z**2
        m = logp.max(axis=1, keepdims=True)
        p = np.exp(logp - m)
        norm = p.sum(axis=1, keepdims=True)
        ll = float(np.sum(np.log(norm) + m))
        r = p / norm
        nk = r.sum(axis=0)
        if np.any(nk < 1e-9):
            break
        w = nk / x.size
        mu = (r * x[:, None]).sum(axis=0) / nk
        sigma = np.sqrt((r * (x[:, None] - mu) ** 2).sum(axis=0) / nk)
        sigma = np.maximum(sigma, floor)
        if abs(ll - prev) < tol * max(abs(ll), 1.0):
            break
        prev = ll
    order = np.argsort(mu)
    return w[order], mu[order], sigma[order]


def segment_states(trace: IntensityTrace, min_weight: float = 0.02) -> StateSegmentation:
    """Label bins as low, high or excluded from a two-Gaussian mixture.

    Bins at or below ``mu_low + 2 sigma_low`` are low, bins at or above
    ``mu_high - 2 sigma_high`` are high, the rest excluded. Raises
    :class:`Unimodal` when those bands overlap or one component is negligible.
    """
    x = np.asarray(trace.counts, dtype=float)
    if x.size < 100:
        raise InsufficientPoints(f"segmentation needs >= 100 bins, got {x.size}")
    if np.ptp(x) == 0:
        raise Unimodal("intensity trace is constant")
    w, mu, sigma = _gaussian_mixture(x)
    thr_low = float(mu[0] + 2 * sigma[0])
    thr_high = float(mu[1] - 2 * sigma[1])
    if thr_low > thr_high or w.min() < min_weight:
        raise Unimodal(
            f"intensity histogram is not bimodal (components {mu[0]:.1f}+-{sigma[0]:.1f}, "
            f"{mu[1]:.1f}+-{sigma[1]:.1f}, weights {w[0]:.3f}/{w[1]:.3f})"
        )
    labels = np.full(x.size, LABEL_EXCLUDED, dtype=np.uint8)
    labels[x <= thr_low] = LABEL_LOW
    labels[x >= thr_high] = LABEL_HIGH
    return StateSegmentation(
        threshold_low=thr_low,
        threshold_high=thr_high,
        labels=labels,
        bin_time=trace.bin_time,
        start_time=trace.start_time,
        weights=tuple(float(v) for v in w),
        means=tuple(float(v) for v in mu),
        sigmas=tuple(float(v) for v in sigma),
    )


# -- decays ------------------------------------------------------------------------


def decay_histogram(
    stream: PhotonStream,
    selection: StateSegmentation | None = None,
    label: int = LABEL_HIGH,
) -> DecayHistogram:
    """Microtime histogram of all photons, or of those in bins with ``label``."""
    h = stream.header
    n = h.max_microtime + 1
    photons = stream.photon_mask()
    micro = stream.microtime[photons].astype(np.int64)
    name = "all"
    if selection is not None:
        name = LABEL_NAMES[label]
        bins = np.flatnonzero(selection.labels == label)
        if bins.size == 0:
            raise EmptySelection(f"no bins carry the label {name!r}")
        t = stream.abs_times()[photons] - selection.start_time
        idx = np.floor(t / selection.bin_time).astype(np.int64)
        idx = np.clip(idx, 0, selection.labels.size - 1)
        micro = micro[selection.labels[idx] == label]
    elif micro.size == 0:
        raise EmptySelection("stream holds no photons")
    counts = np.bincount(micro, minlength=n).astype(np.uint64)
    return DecayHistogram(counts=counts, resolution=h.microtime_resolution, sync_period=h.sync_period, label=name)


def fit_decay(hist: DecayHistogram, model: str = "mono", background: bool = True) -> FitResult:
    """Poisson ML fit of a mono- or bi-exponential decay from the histogram peak on.

    Bins that extend past the sync period are dropped so the background term
    sees full-width bins only. Times in the result are relative to the peak
    bin, whose position is stored in ``info["t_peak"]``.
    """
    n_exp = {"mono": 1, "bi": 2}.get(model)
    if n_exp is None:
        raise ValueError("model must be 'mono' or 'bi'")
    counts = np.asarray(hist.counts, dtype=float)
    n_full = int(math.floor(round(hist.sync_period / hist.resolution, 9)))
    counts = counts[: max(n_full, 1)]
    peak = int(np.argmax(counts))
    y = counts[peak:]
    t = hist.resolution * np.arange(y.size)
    res = fit_decay_curve(t, y, n_exp, background)
    res.info.update(t_peak=peak * hist.resolution, window_bins=int(y.size), label=hist.label)
    return res


def decay_fit_curve(result: FitResult, t) -> np.ndarray:
    """Evaluate a :func:`fit_decay` result at times ``t`` measured from the peak."""
    p = result.parameters
    n = 2 if "tau2" in p else 1
    amps = [p[f"A{i}"] for i in range(1, n + 1)]
    taus = [p[f"tau{i}"] for i in range(1, n + 1)]
    return decay_model(t, amps, taus, p.get("bg", 0.0))


# -- saturation --------------------------------------------------------------------


def saturation_model(power, a, b, p_sat):
    power = np.asarray(power, dtype=float)
    return a * (1.0 - np.exp(-power / p_sat)) + b * power


def _half_max_power(power, intensity):
    target = 0.5 * intensity.max()
    above = np.flatnonzero(intensity >= target)
    k = int(above[0])
    if k == 0:
        return float(power[0])
    p0, p1 = power[k - 1], power[k]
    i0, i1 = intensity[k - 1], intensity[k]
    return float(p0 + (target - i0) * (p1 - p0) / (i1 - i0))


def fit_saturation(points) -> FitResult:
    """Weighted least-squares fit of ``I = A (1 - exp(-P / P_sat)) + B P``.

    ``points`` is a sequence of ``(power, intensity)``; ``A`` and ``B`` are
    constrained to be non-negative. Residuals are weighted by
    ``1 / sqrt(max(I, 1))``; ``residual_norm`` is the norm of those weighted
    residuals.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (power, intensity) pairs")
    if pts.shape[0] < 5:
        raise InsufficientPoints(f"saturation fit needs >= 5 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    power, inten = pts[:, 0], pts[:, 1]
    if inten.max() <= 0 or np.ptp(inten) == 0:
        raise FitDiverged("intensities carry no saturation signal")
    if power.min() < 0:
        raise ValueError("powers must be non-negative")
    guess = _half_max_power(power, inten)
    if guess <= 0 or power.min() > guess or power.max() < 2.0 * guess:
        raise InsufficientRange(
            f"powers [{power.min():g}, {power.max():g}] do not bracket the saturation region "
            f"around the initial P_sat guess {guess:g}"
        )
    sigma = np.sqrt(np.maximum(np.abs(inten), 1.0))

    def resid(p):
        return (saturation_model(power, p[0], p[1], math.exp(p[2])) - inten) / sigma

    def transform(p):
        vals = np.array([p[0], p[1], math.exp(p[2])])
        return vals, np.diag([1.0, 1.0, vals[2]])

    a0 = float(inten.max())
    return least_squares_fit(
        "saturation",
        ["A", "B", "P_sat"],
        resid,
        [a0, 0.0, math.log(guess)],
        # both terms of the model are emission, so neither can be negative
        bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
        transform=transform,
        info={"p_sat_guess": guess, "n_points": int(power.size)},
    )


# -- spectrum ----------------------------------------------------------------------


def gaussian_model(x, amplitude, center, sigma, baseline):
    x = np.asarray(x, dtype=float)
    return baseline + amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def fit_spectrum(wavelengths, intensities, dominance: float = 0.5) -> SpectrumFit:
    """Gaussian plus constant baseline fit of a single-peak emission spectrum.

    Raises :class:`NoPeak` for a flat spectrum or when a secondary peak reaches
    ``dominance`` times the prominence of the main one.
    """
    x = np.asarray(wavelengths, dtype=float)
    y = np.asarray(intensities, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("wavelengths and intensities must be 1-D and equally long")
    if x.size < 10:
        raise InsufficientPoints(f"spectrum fit needs >= 10 samples, got {x.size}")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    span = float(np.ptp(y))
    if span <= 0:
        raise NoPeak("spectrum is flat")
    # pad with the minimum so edge maxima count as peaks
    padded = np.concatenate(([y.min()], y, [y.min()]))
    idx, props = signal.find_peaks(padded, prominence=0.05 * span)
    if idx.size == 0:
        raise NoPeak("no peak rises above the baseline")
    prom = props["prominences"]
    rank = np.argsort(prom)[::-1]
    if idx.size > 1 and prom[rank[1]] >= dominance * prom[rank[0]]:
        raise NoPeak("spectrum has no single dominant peak")
    k = int(idx[rank[0]]) - 1
    widths = signal.peak_widths(padded, [k + 1], rel_height=0.5)[0][0]
    step = float(np.median(np.diff(x)))
    sigma0 = max(widths * step / FWHM_PER_SIGMA, step / 2)
    base0 = float(np.percentile(y, 5))
    p0 = [float(y[k] - base0), float(x[k]), sigma0, base0]

    def resid(p):
        return gaussian_model(x, p[0], p[1], p[2], p[3]) - y

    lo = [-np.inf, x[0], step * 1e-3, -np.inf]
    hi = [np.inf, x[-1], np.ptp(x) * 10, np.inf]
    fit = least_squares_fit(
        "spectrum", ["amplitude", "center", "sigma", "baseline"], resid, p0, bounds=(lo, hi)
    )
    p = fit.parameters
    if p["amplitude"] <= 0:
        raise NoPeak("fitted peak has non-positive amplitude")
    fwhm = FWHM_PER_SIGMA * abs(p["sigma"])
    return SpectrumFit(cew=p["center"], fwhm=fwhm, amplitude=p["amplitude"], baseline=p["baseline"], fit=fit)
