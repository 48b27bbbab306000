"""Hanbury Brown-Twiss cross-correlation of detector A against detector B.

Two histogram flavours are produced:

* pulsed: linear bins over +/- ``span`` sync periods, used for the
  antibunching dip and the background-corrected purity estimate;
* long delay: log bins from 10 ns up to ~1 s, folded over the sign of the
  delay, used for blinking-induced bunching.

Both fast paths are checked against an exhaustive pair enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _kernels
from .errors import (
    AnalysisError,
    DurationTooShort,
    EmptyChannel,
    FitDiverged,
    InsufficientRange,
    NoPlateau,
    SpanTooLarge,
    TooLarge,
)
from .fitting import FitResult, least_squares_fit
from .stream import CHANNEL_A, CHANNEL_B, PhotonStream

MODE_PULSED = "pulsed"
MODE_LONG = "long_delay"

BRUTE_FORCE_LIMIT = 100_000
DEFAULT_TAU_RANGE = (10e-9, 1.0)
# a cascade bin must be at least this many coarse ticks wide
CASCADE_MIN_TICKS = 16
# bins expecting fewer uncorrelated pairs than this are counted exactly
CASCADE_MIN_COUNT = 1e4


@dataclass(frozen=True)
class CorrelationHistogram:
    """Coincidence counts against delay ``t_B - t_A``.

    Attributes:
        bin_edges: Strictly increasing delay edges in seconds.
        counts: Raw coincidences per bin.
        normalization: Expected counts per bin for uncorrelated photons, so
            that ``g2 = counts / normalization``.
        mode: ``"pulsed"`` or ``"long_delay"``. Long-delay histograms are
            folded: a bin holds delays of either sign with ``|d|`` inside it.
        total_starts: Photons on channel A.
        total_stops: Photons on channel B.
        span: Largest delay covered, in seconds.
        sync_period: Excitation period of the source stream.
        meta: Extra bookkeeping (peak window, cascade levels, ...).
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    normalization: np.ndarray
    mode: str
    total_starts: int
    total_stops: int
    span: float
    sync_period: float
    meta: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        e = self.bin_edges
        if self.mode == MODE_LONG:
            return np.sqrt(e[:-1] * e[1:])
        return 0.5 * (e[:-1] + e[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def g2(self) -> np.ndarray:
        norm = np.asarray(self.normalization, dtype=float)
        out = np.full(norm.shape, np.nan)
        ok = norm > 0
        out[ok] = self.counts[ok] / norm[ok]
        return out


@dataclass(frozen=True)
class PurityResult:
    """Central-to-side peak area ratio before and after background removal.

    ``background_level`` is the plateau count per histogram bin between
    peaks. ``uncertainty`` is the 1-sigma Poisson error of
    ``g2_zero_corrected``.
    """

    g2_zero_raw: float
    g2_zero_corrected: float
    background_level: float
    central_peak_area: float
    mean_side_peak_area: float
    uncertainty: float
    uncertainty_raw: float = float("nan")
    corrected_central_area: float = float("nan")
    corrected_side_area: float = float("nan")
    peak_halfwidth: float = float("nan")
    side_peaks: int = 0
    per_bin: bool = False

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def _channel_times(stream, channel):
    return np.ascontiguousarray(stream.channel_times(channel), dtype=np.float64)


def _n_chunks():
    return 4 * numba.get_num_threads()


# -- pulsed ------------------------------------------------------------------------


def _estimate_lifetime(stream):
    """Mono-exponential lifetime of all photons, or None if no usable fit."""
    from .trace import decay_histogram, fit_decay

    try:
        fit = fit_decay(decay_histogram(stream), "mono", background=True)
    except AnalysisError:
        return None
    tau = fit.parameters["tau1"]
    return tau if fit.converged and math.isfinite(tau) and tau > 0 else None


def peak_windows(edges, sync_period, span, halfwidth):
    """Boolean bin masks for each peak ``k`` in ``-span..span`` fully inside the range."""
    centers = 0.5 * (edges[:-1] + edges[1:])
    # tolerance keeps rounding from adding a bin to some windows only
    tol = 1e-6 * float(edges[1] - edges[0])
    out = {}
    for k in range(-span, span + 1):
        c = k * sync_period
        if c - halfwidth < edges[0] or c + halfwidth > edges[-1]:
            continue
        out[k] = np.abs(centers - c) <= halfwidth + tol
    return out


def correlate_pulsed(
    stream: PhotonStream,
    bin_width: float,
    span: int = 10,
    *,
    peak_halfwidth: float | None = None,
) -> CorrelationHistogram:
    """Histogram of ``t_B - t_A`` over +/- ``span`` sync periods.

    Bins are ``bin_width`` wide and centred on multiples of ``bin_width``, so
    zero delay sits in the middle of a bin. Counting is a sorted two-pointer
    sweep split over chunks of channel A with per-chunk histograms summed.

    The normalization is the mean side-peak area, constant across bins, so
    a side peak of an uncorrelated source integrates to one. Peak windows are
    +/- ``peak_halfwidth`` around ``k T``; by default 5 times the larger of
    the fitted all-photon lifetime and ``bin_width``, capped at 0.4 T.
    """
    h = stream.header
    period = h.sync_period
    if not bin_width >= h.microtime_resolution:
        raise ValueError("bin_width must be at least the microtime resolution")
    if int(span) != span or span < 10:
        raise ValueError("span must be an integer number of sync periods >= 10")
    span = int(span)
    ta = _channel_times(stream, CHANNEL_A)
    tb = _channel_times(stream, CHANNEL_B)
    if ta.size == 0 or tb.size == 0:
        raise EmptyChannel("pulsed correlation needs photons on both channels A and B")
    reach = span * period
    if reach > h.duration:
        raise SpanTooLarge(f"span of {reach:g} s exceeds the stream duration {h.duration:g} s")

    n = int(math.ceil(round(reach / bin_width, 9)))
    edges = (np.arange(2 * n + 2) - n - 0.5) * bin_width
    counts = _kernels.pair_histogram(ta, tb, edges, _n_chunks()).astype(np.uint64)

    if peak_halfwidth is None:
        tau = _estimate_lifetime(stream)
        tau = period / 50 if tau is None else tau
        peak_halfwidth = min(5.0 * max(tau, bin_width), 0.4 * period)
    windows = peak_windows(edges, period, span, peak_halfwidth)
    side = [counts[m].sum() for k, m in windows.items() if k != 0]
    norm_value = float(np.mean(side)) if side else 0.0
    if norm_value <= 0:
        # no side coincidences at all: fall back to the Poisson expectation
        norm_value = ta.size * tb.size * period / h.duration
    normalization = np.full(counts.size, norm_value)
    return CorrelationHistogram(
        bin_edges=edges,
        counts=counts,
        normalization=normalization,
        mode=MODE_PULSED,
        total_starts=int(ta.size),
        total_stops=int(tb.size),
        span=float(edges[-1]),
        sync_period=period,
        meta={"peak_halfwidth": float(peak_halfwidth), "span_periods": span, "bin_width": float(bin_width)},
    )


def correlate_brute_force(stream: PhotonStream, bin_edges, *, fold: bool = False) -> CorrelationHistogram:
    """Exhaustive O(N_A N_B) pair histogram; the reference for the fast paths.

    With ``fold`` the histogram is over ``|t_B - t_A|`` as in long-delay mode.
    The normalization is the uncorrelated-pair expectation for each bin.
    """
    photons = int(np.count_nonzero(stream.photon_mask()))
    if photons > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"brute-force correlation is limited to {BRUTE_FORCE_LIMIT} photons, got {photons}")
    edges = np.ascontiguousarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with at least two entries")
    if fold and edges[0] <= 0:
        raise ValueError("folded histograms need a positive first edge")
    ta = _channel_times(stream, CHANNEL_A)
    tb = _channel_times(stream, CHANNEL_B)
    counts = _kernels.brute_force_pairs(ta, tb, edges, fold).astype(np.uint64)
    span_t = stream.header.duration
    if fold:
        norm = long_delay_normalization(edges, ta.size, tb.size, span_t)
    else:
        norm = ta.size * tb.size * np.diff(edges) / span_t if span_t > 0 else np.zeros(edges.size - 1)
    return CorrelationHistogram(
        bin_edges=edges,
        counts=counts,
        normalization=norm,
        mode=MODE_LONG if fold else MODE_PULSED,
        total_starts=int(ta.size),
        total_stops=int(tb.size),
        span=float(np.max(np.abs(edges))),
        sync_period=stream.header.sync_period,
        meta={"brute_force": True},
    )


# -- background correction ---------------------------------------------------------


def background_corrected(m, m_b):
    """Background-free coincidences ``M + M_b - 2 sqrt(M M_b)``.

    Values with ``M < M_b`` are clamped to zero: the closed form is
    ``(sqrt(M) - sqrt(M_b))**2`` and would otherwise grow again as ``M``
    falls below the background.
    """
    m = np.asarray(m, dtype=float)
    m_b = np.asarray(m_b, dtype=float)
    out = m + m_b - 2.0 * np.sqrt(m) * np.sqrt(m_b)
    return np.where(m >= m_b, np.maximum(out, 0.0), 0.0)


def _corr_derivs(m, b):
    """Partial derivatives of :func:`background_corrected` in M and M_b."""
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dm = np.where(m >= b, 1.0 - np.sqrt(b / np.maximum(m, 1e-300)), 0.0)
        db = np.where(m >= b, 1.0 - np.sqrt(m / b) if b > 0 else 0.0, 0.0)
    return dm, db


def plateau_mask(edges, sync_period, span, halfwidth, bin_width):
    """Bins in the central half of each gap between neighbouring peaks.

    Returns (mask, number_of_gaps). Raises :class:`NoPlateau` if a gap is
    narrower than three bins.
    """
    gap = sync_period - 2 * halfwidth
    if gap < 3 * bin_width:
        raise NoPlateau(
            f"gap between peaks ({gap:g} s) is narrower than three bins; peaks overlap"
        )
    centers = 0.5 * (edges[:-1] + edges[1:])
    mask = np.zeros(centers.size, dtype=bool)
    n_gaps = 0
    for k in range(-span, span):
        mid = (k + 0.5) * sync_period
        lo, hi = mid - gap / 4, mid + gap / 4
        if lo < edges[0] or hi > edges[-1]:
            continue
        sel = (centers >= lo) & (centers <= hi)
        if sel.any():
            mask |= sel
            n_gaps += 1
    return mask, n_gaps


def subtract_background(hist: CorrelationHistogram, per_bin: bool = False) -> PurityResult:
    """Estimate g2(0) with uncorrelated background coincidences removed.

    The background level ``M_b`` is the mean count per bin over the central
    half of each inter-peak gap. By default the correction is applied to whole
    peak areas, with ``M_b`` scaled to the window width; ``per_bin`` applies
    it to every bin before integrating instead.
    """
    if hist.mode != MODE_PULSED:
        raise ValueError("background subtraction needs a pulsed histogram")
    edges = hist.bin_edges
    period = hist.sync_period
    span = int(hist.meta.get("span_periods", round(hist.span / period)))
    halfwidth = float(hist.meta.get("peak_halfwidth", 0.1 * period))
    bin_width = float(np.median(np.diff(edges)))
    windows = peak_windows(edges, period, span, halfwidth)
    if 0 not in windows:
        raise NoPlateau("central peak window lies outside the histogram")
    side_keys = [k for k in windows if k != 0]
    if len(side_keys) < 4:
        raise NoPlateau(f"need at least 4 side peaks, found {len(side_keys)}")
    pmask, n_gaps = plateau_mask(edges, period, span, halfwidth, bin_width)
    if n_gaps < 4:
        raise NoPlateau(f"need at least 4 inter-peak gaps, found {n_gaps}")

    counts = np.asarray(hist.counts, dtype=float)
    n_p = int(pmask.sum())
    plateau_total = float(counts[pmask].sum())
    level = plateau_total / n_p
    n_s = len(side_keys)

    central_bins = counts[windows[0]]
    side_bins = [counts[windows[k]] for k in side_keys]
    m0 = float(central_bins.sum())
    m_side = np.array([s.sum() for s in side_bins])
    side_mean = float(m_side.mean())
    if side_mean <= 0:
        raise NoPlateau("side peaks are empty")
    raw = m0 / side_mean
    # raw ratio error: central and side areas are independent Poisson counts
    var_raw = (m0 + raw**2 * m_side.sum() / n_s**2) / side_mean**2

    if per_bin:
        c = float(background_corrected(central_bins, level).sum())
        s_each = np.array([background_corrected(s, level).sum() for s in side_bins])
    else:
        c = float(background_corrected(m0, level * central_bins.size))
        s_each = np.array([float(background_corrected(m_side[i], level * side_bins[i].size)) for i in range(n_s)])
    s_bar = float(s_each.mean())
    corrected = c / s_bar if s_bar > 0 else float("nan")

    # first-order Poisson propagation over central, side and plateau counts
    if s_bar > 0:
        var = 0.0
        d_plateau = 0.0
        if per_bin:
            dm, db = _corr_derivs(central_bins, level)
            var += np.sum((dm / s_bar) ** 2 * central_bins)
            d_plateau += np.sum(db) / s_bar
            for s in side_bins:
                dm, db = _corr_derivs(s, level)
                var += np.sum((corrected / s_bar * dm / n_s) ** 2 * s)
                d_plateau -= corrected / s_bar * np.sum(db) / n_s
            d_plateau /= n_p
        else:
            nw0 = central_bins.size
            dm, db = _corr_derivs(m0, level * nw0)
            var += (dm / s_bar) ** 2 * m0
            d_plateau += db * nw0 / s_bar
            for i, s in enumerate(side_bins):
                dm, db = _corr_derivs(m_side[i], level * s.size)
                var += (corrected / s_bar * dm / n_s) ** 2 * m_side[i]
                d_plateau -= corrected / s_bar * db * s.size / n_s
            d_plateau /= n_p
        if plateau_total > 0:
            var += float(d_plateau) ** 2 * plateau_total
        if c == 0.0:
            # clamped at zero, where the derivative vanishes: report the
            # spread of the central excess over background instead
            nw0 = central_bins.size
            var = (m0 + nw0**2 * plateau_total / n_p**2) / s_bar**2
        uncertainty = math.sqrt(float(var))
    else:
        uncertainty = float("nan")

    return PurityResult(
        g2_zero_raw=raw,
        g2_zero_corrected=corrected,
        background_level=level,
        central_peak_area=m0,
        mean_side_peak_area=side_mean,
        uncertainty=uncertainty,
        uncertainty_raw=math.sqrt(var_raw),
        corrected_central_area=c,
        corrected_side_area=s_bar,
        peak_halfwidth=halfwidth,
        side_peaks=n_s,
        per_bin=per_bin,
    )


# -- long delay --------------------------------------------------------------------


def long_delay_normalization(edges, n_a, n_b, t_span):
    """Expected folded A x B pair counts per bin for independent Poisson channels.

    For a bin ``[L, R)`` the number of ordered pairs with ``0 <= d < R`` that
    fit inside an observation window of length ``T`` scales as
    ``R T - R^2 / 2``; both signs of the delay contribute.
    """
    e = np.asarray(edges, dtype=float)
    lo, hi = e[:-1], e[1:]
    if t_span <= 0:
        return np.zeros(lo.size)
    overlap = (hi - lo) * t_span - 0.5 * (hi**2 - lo**2)
    return 2.0 * n_a * n_b * overlap / t_span**2


def log_edges(tau_min, tau_max, bins_per_decade):
    n = max(1, int(round(bins_per_decade * math.log10(tau_max / tau_min))))
    return tau_min * (tau_max / tau_min) ** (np.arange(n + 1) / n)


def _snap_to_sync(edges, period):
    """Move edges beyond half a period onto (n + 1/2) T so bins hold whole peaks."""
    e = edges.copy()
    far = e >= 0.5 * period
    e[far] = (np.round(e[far] / period - 0.5) + 0.5) * period
    return np.unique(e)


def _runs(ticks):
    """Distinct values of a non-decreasing tick array and their multiplicities."""
    if ticks.size == 0:
        return ticks, np.zeros(0, dtype=np.int64)
    starts = np.concatenate(([0], np.flatnonzero(np.diff(ticks)) + 1))
    lengths = np.diff(np.concatenate((starts, [ticks.size])))
    return np.ascontiguousarray(ticks[starts]), lengths.astype(np.int64)


def _plan_levels(edges, expected, tick, min_count):
    """Cascade level per bin (0 = exact counting) and snapped edges.

    A bin may use level k >= 1 when it spans at least ``CASCADE_MIN_TICKS``
    ticks of width ``2**k * tick`` and expects at least ``min_count``
    uncorrelated pairs. Shared edges snap to the coarser grid of the two
    neighbouring bins; level-k grid points ``a 2**k tick + tick`` are also on
    every finer grid.
    """
    width = np.diff(edges)
    level = np.zeros(width.size, dtype=np.int64)
    for i, (w, x) in enumerate(zip(width, expected)):
        if x >= min_count:
            k = int(math.floor(math.log2(w / (CASCADE_MIN_TICKS * tick))))
            level[i] = max(k, 0)
    edge_level = np.zeros(edges.size, dtype=np.int64)
    edge_level[:-1] = level
    edge_level[1:] = np.maximum(edge_level[1:], level)
    snapped = edges.copy()
    for j, k in enumerate(edge_level):
        if k > 0:
            w = tick * 2**k
            snapped[j] = np.round((edges[j] - tick) / w) * w + tick
    return snapped


def _assign_levels(edges, expected, tick, min_count):
    """Final cascade level per bin on already snapped edges."""
    level = np.zeros(edges.size - 1, dtype=np.int64)
    for i in range(level.size):
        lo, hi = edges[i], edges[i + 1]
        if expected[i] < min_count:
            continue
        k = int(math.floor(math.log2((hi - lo) / (CASCADE_MIN_TICKS * tick))))
        while k > 0:
            w = tick * 2**k
            a = (lo - tick) / w
            b = (hi - tick) / w
            if abs(a - round(a)) < 1e-6 and abs(b - round(b)) < 1e-6:
                break
            k -= 1
        level[i] = max(k, 0)
    return level


def correlate_long_delay(
    stream: PhotonStream,
    decades: tuple = DEFAULT_TAU_RANGE,
    bins_per_decade: int = 10,
    *,
    min_count: float = CASCADE_MIN_COUNT,
) -> CorrelationHistogram:
    """Folded A x B correlation on log-spaced delays ``decades = (tau_min, tau_max)``.

    Edges past half a sync period are moved to half-integer multiples of the
    period so every bin holds whole excitation peaks. Bins are then counted by
    one of two exact-merge routes:

    * short or sparse bins: per-edge linear merges over the raw time stamps;
    * wide, well-populated bins: a multi-tau cascade. Base ticks of half a
      sync period are coarsened 2x per level, collapsed into (tick, weight)
      runs and correlated as integer lags, so each level costs O(N) and the
      whole ladder O(N log(tau_max / tau_min)).

    ``g2 = counts / normalization`` is 1 for independent Poisson channels.
    """
    h = stream.header
    tau_min, tau_max = (float(v) for v in decades)
    if not 0 < tau_min < tau_max:
        raise ValueError("decades must be (tau_min, tau_max) with 0 < tau_min < tau_max")
    if int(bins_per_decade) != bins_per_decade or bins_per_decade < 1:
        raise ValueError("bins_per_decade must be a positive integer")
    if h.duration < 10.0 * tau_max:
        raise DurationTooShort(
            f"stream lasts {h.duration:g} s; delays up to {tau_max:g} s need at least {10 * tau_max:g} s"
        )
    ta = _channel_times(stream, CHANNEL_A)
    tb = _channel_times(stream, CHANNEL_B)
    if ta.size == 0 or tb.size == 0:
        raise EmptyChannel("long-delay correlation needs photons on both channels A and B")
    period = h.sync_period
    span_t = h.duration
    tick = 0.5 * period

    edges = _snap_to_sync(log_edges(tau_min, tau_max, int(bins_per_decade)), period)
    expected = long_delay_normalization(edges, ta.size, tb.size, span_t)
    edges = np.unique(_plan_levels(edges, expected, tick, min_count))
    expected = long_delay_normalization(edges, ta.size, tb.size, span_t)
    level = _assign_levels(edges, expected, tick, min_count)

    counts = np.zeros(edges.size - 1, dtype=np.int64)
    exact = np.flatnonzero(level == 0)
    if exact.size:
        need = np.unique(np.concatenate((edges[exact], edges[exact + 1])))
        sub = _kernels.folded_edge_counts(ta, tb, need)
        pos = np.searchsorted(need, edges[exact])
        counts[exact] = sub[pos]

    u_a = np.floor(ta / tick).astype(np.int64)
    u_b = np.floor(tb / tick).astype(np.int64)
    for k in np.unique(level[level > 0]):
        k = int(k)
        bins = np.flatnonzero(level == k)
        w = tick * 2**k
        a_lo = np.round((edges[bins] - tick) / w).astype(np.int64)
        a_hi = np.round((edges[bins + 1] - tick) / w).astype(np.int64)
        shift = (1 << (k - 1)) - 1
        ca, wa = _runs(u_a >> k)
        cb, wb = _runs((u_b + shift) >> k)
        ca_r, wa_r = _runs(u_b >> k)
        cb_r, wb_r = _runs((u_a + shift) >> k)
        counts[bins] = _kernels.cascade_level_counts(ca, wa, cb, wb, ca_r, wa_r, cb_r, wb_r, a_lo + 1, a_hi)

    return CorrelationHistogram(
        bin_edges=edges,
        counts=counts.astype(np.uint64),
        normalization=expected,
        mode=MODE_LONG,
        total_starts=int(ta.size),
        total_stops=int(tb.size),
        span=float(edges[-1]),
        sync_period=period,
        meta={
            "tau_range": [tau_min, tau_max],
            "bins_per_decade": int(bins_per_decade),
            "cascade_level": level.tolist(),
            "base_tick": tick,
        },
    )


# -- flicker fit -------------------------------------------------------------------


def flicker_model(lo, hi, amplitude, tau):
    """Bin average of ``1 + A exp(-t / tau)`` over ``[lo, hi)``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    avg = tau * (np.exp(-lo / tau) - np.exp(-hi / tau)) / (hi - lo)
    return 1.0 + amplitude * avg


def fit_flicker(hist: CorrelationHistogram, min_delay: float | None = None) -> FitResult:
    """Fit ``g2 = 1 + A_f exp(-tau / tau_f)`` to a long-delay histogram.

    Bins starting below ``min_delay`` (default: half a sync period, which
    skips the antibunching dip) are ignored. Residuals are weighted by the
    Poisson error ``sqrt(counts) / normalization``; ``residual_norm`` is
    the norm of the weighted residuals. When ``A_f`` is consistent with zero
    the flicker time cannot be determined: it is reported in
    ``unconstrained`` and ``A_f`` is the weighted mean of ``g2 - 1``.
    """
    if hist.mode != MODE_LONG:
        raise ValueError("fit_flicker needs a long-delay histogram")
    if min_delay is None:
        min_delay = 0.5 * hist.sync_period
    lo, hi = hist.bin_edges[:-1], hist.bin_edges[1:]
    norm = np.asarray(hist.normalization, dtype=float)
    counts = np.asarray(hist.counts, dtype=float)
    use = (lo >= min_delay * (1 - 1e-9)) & (norm > 0)
    if use.sum() < 6 or hi[use].max() < 10 * lo[use].min():
        raise InsufficientRange("flicker fit needs at least 6 bins spanning a decade past the dip")
    lo, hi, counts, norm = lo[use], hi[use], counts[use], norm[use]
    g = counts / norm
    sigma = np.sqrt(np.maximum(counts, 1.0)) / norm
    info = {"min_delay": float(min_delay), "n_bins": int(lo.size)}
    tau_lo = float(lo[0]) / 10
    tau_hi = float(hi[-1]) * 10

    a0 = float(np.mean(g[:3]) - 1.0)
    mid = np.sqrt(lo * hi)
    below = np.flatnonzero(g - 1 < a0 / math.e)
    tau0 = float(mid[below[0]]) if a0 > 0 and below.size else float(np.sqrt(mid[0] * mid[-1]))
    tau0 = min(max(tau0, tau_lo * 1.01), tau_hi / 1.01)

    def resid(p):
        return (flicker_model(lo, hi, p[0], math.exp(p[1])) - g) / sigma

    def transform(p):
        vals = np.array([p[0], math.exp(p[1])])
        return vals, np.diag([1.0, vals[1]])

    try:
        fit = least_squares_fit(
            "flicker",
            ["A_f", "tau_f"],
            resid,
            [a0, math.log(tau0)],
            bounds=([-1.0, math.log(tau_lo)], [100.0, math.log(tau_hi)]),
            absolute_sigma=True,
            transform=transform,
            info=info,
        )
    except FitDiverged:
        fit = None

    degenerate = (
        fit is None
        or not fit.converged
        or abs(fit.parameters["A_f"]) < 2 * fit.uncertainties["A_f"]
        or not tau_lo * 1.001 < fit.parameters["tau_f"] < tau_hi / 1.001
    )
    if not degenerate:
        fit.info["plateau"] = 1.0 + fit.parameters["A_f"]
        return fit

    wts = 1.0 / sigma**2
    a = float(np.sum(wts * (g - 1.0)) / np.sum(wts))
    a_err = float(1.0 / math.sqrt(np.sum(wts)))
    r = (g - 1.0 - a) / sigma
    info["plateau"] = 1.0 + a
    return FitResult(
        model_name="flicker",
        parameters={"A_f": a},
        uncertainties={"A_f": a_err},
        residual_norm=float(np.sqrt(r @ r)),
        converged=True,
        iterations=fit.iterations if fit is not None else 0,
        unconstrained=("tau_f",),
        info=info,
    )
