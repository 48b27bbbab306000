"""Fluorescence lifetime-intensity distribution (FLID) maps.

Each time bin of a trace gives one sample (counts per bin, mean arrival
time). The map is a Gaussian product-kernel density of those samples,
integrated exactly over each grid cell and normalised over the grid window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .errors import MismatchedTraces, TooFewSamples
from .trace import DEFAULT_BIN_TIME, IntensityTrace, LifetimeTrace, bin_intensity, mean_arrival_trace

DEFAULT_GRID = (256, 256)
MIN_SAMPLES = 100


@dataclass(frozen=True)
class FlidMap:
    """Density over (intensity, mean arrival time).

    ``density`` has shape ``(n_lifetime, n_intensity)``: rows follow the
    lifetime axis, columns the intensity axis. Axes hold cell centres;
    ``*_edges`` the cell boundaries.
    """

    intensity_edges: np.ndarray
    lifetime_edges: np.ndarray
    density: np.ndarray
    bandwidths: tuple
    sample_count: int

    @property
    def intensity_axis(self) -> np.ndarray:
        e = self.intensity_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def lifetime_axis(self) -> np.ndarray:
        e = self.lifetime_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def cell_area(self) -> float:
        return float((self.intensity_edges[1] - self.intensity_edges[0]) * (self.lifetime_edges[1] - self.lifetime_edges[0]))

    @property
    def total_mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


def silverman_bandwidth(x) -> float:
    """``1.06 * std * n**(-1/5)``."""
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2) if x.size > 1 else 0.0


def _cell_weights(samples, edges, h):
    """Kernel mass of each sample in each cell, shape (n_samples, n_cells)."""
    z = (edges[None, :] - samples[:, None]) / h
    cdf = ndtr(z)
    return np.ascontiguousarray(np.diff(cdf, axis=1))


def flid_samples(intensity: IntensityTrace, lifetime: LifetimeTrace):
    """Paired (counts, mean arrival) samples from bins with a defined arrival time."""
    if not np.isclose(intensity.bin_time, lifetime.bin_time, rtol=1e-12) or len(intensity) != len(lifetime):
        raise MismatchedTraces(
            f"intensity trace ({len(intensity)} bins of {intensity.bin_time:g} s) and lifetime trace "
            f"({len(lifetime)} bins of {lifetime.bin_time:g} s) do not match"
        )
    ok = lifetime.defined
    return np.asarray(intensity.counts, dtype=float)[ok], np.asarray(lifetime.mean_arrival, dtype=float)[ok]


def build_flid(
    intensity: IntensityTrace,
    lifetime: LifetimeTrace,
    grid: tuple = DEFAULT_GRID,
    bandwidth: tuple | None = None,
    *,
    intensity_max: float | None = None,
) -> FlidMap:
    """Kernel density estimate over (counts per bin, mean arrival time).

    Args:
        intensity: Per-bin photon counts.
        lifetime: Per-bin mean arrival times; empty bins are skipped.
        grid: ``(n_intensity, n_lifetime)`` cells.
        bandwidth: ``(h_intensity, h_lifetime)``; a ``None`` entry uses
            Silverman's rule. Bandwidths never drop below one cell.
        intensity_max: Upper end of the intensity axis before the 10% margin;
            defaults to the largest sample. Lets several maps share axes.

    The grid spans ``[0, 1.1 * intensity_max] x [0, sync_period]``. Samples are
    sorted before summation, so the result is independent of their order.
    """
    x, y = flid_samples(intensity, lifetime)
    if x.size < MIN_SAMPLES:
        raise TooFewSamples(f"FLID needs >= {MIN_SAMPLES} bins with photons, got {x.size}")
    nx, ny = (int(v) for v in grid)
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 cells per axis")
    top = float(intensity_max) if intensity_max is not None else float(x.max())
    top = max(top, 1.0)
    x_edges = np.linspace(0.0, 1.1 * top, nx + 1)
    y_edges = np.linspace(0.0, lifetime.sync_period, ny + 1)
    dx, dy = x_edges[1], y_edges[1]

    hx, hy = bandwidth if bandwidth is not None else (None, None)
    hx = silverman_bandwidth(x) if hx is None else float(hx)
    hy = silverman_bandwidth(y) if hy is None else float(hy)
    if not (np.isfinite(hx) and np.isfinite(hy)) or hx < 0 or hy < 0:
        raise ValueError("bandwidths must be finite and non-negative")
    hx, hy = max(hx, dx), max(hy, dy)

    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    wx = _cell_weights(x, x_edges, hx)
    wy = _cell_weights(y, y_edges, hy)
    mass = _kernels.kde_cell_mass(wx, wy)
    total = mass.sum()
    density = mass / (total * dx * dy)
    return FlidMap(
        intensity_edges=x_edges,
        lifetime_edges=y_edges,
        density=density,
        bandwidths=(hx, hy),
        sample_count=int(x.size),
    )


def flid_from_stream(stream, bin_time=DEFAULT_BIN_TIME, grid=DEFAULT_GRID, bandwidth=None, **kw) -> FlidMap:
    return build_flid(bin_intensity(stream, bin_time), mean_arrival_trace(stream, bin_time), grid, bandwidth, **kw)


def flid_power_series(
    streams,
    bin_time: float = DEFAULT_BIN_TIME,
    grid: tuple = DEFAULT_GRID,
    bandwidth: tuple | None = None,
) -> list:
    """One map per ``(power_ratio, stream)`` pair, all on the same axes.

    The shared intensity axis reaches 1.1 times the largest per-bin count in
    the whole series. Maps come back in input order.
    """
    traces = [(bin_intensity(s, bin_time), mean_arrival_trace(s, bin_time)) for _, s in streams]
    top = max(float(np.max(flid_samples(i, t)[0], initial=0.0)) for i, t in traces) if traces else 0.0
    return [build_flid(i, t, grid, bandwidth, intensity_max=top) for i, t in traces]


@dataclass(frozen=True)
class Mode:
    intensity: float
    lifetime: float
    density: float
    prominence: float


def find_modes(flid: FlidMap, min_prominence: float = 0.01) -> list:
    """Local maxima whose prominence is at least ``min_prominence * max(density)``.

    Flat-topped maxima count once. Modes are sorted by density, highest first.
    """
    d = np.ascontiguousarray(flid.density)
    peaks, prom = _kernels.persistence_peaks(d)
    keep = prom >= min_prominence * d.max()
    out = []
    for p, pr in zip(peaks[keep], prom[keep]):
        r, c = divmod(int(p), d.shape[1])
        out.append(Mode(float(flid.intensity_axis[c]), float(flid.lifetime_axis[r]), float(d[r, c]), float(pr)))
    out.sort(key=lambda m: (-m.density, m.intensity, m.lifetime))
    return out


def second_moment_spread(flid: FlidMap) -> float:
    """Trace of the density covariance with each axis divided by its mean.

    Dimensionless, so maps taken at different count rates compare directly.
    """
    w = flid.density / flid.density.sum()
    xi = flid.intensity_axis[None, :]
    yi = flid.lifetime_axis[:, None]
    mx = float((w * xi).sum())
    my = float((w * yi).sum())
    vx = float((w * (xi - mx) ** 2).sum()) / mx**2
    vy = float((w * (yi - my) ** 2).sum()) / my**2
    return vx + vy
