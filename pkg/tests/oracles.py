"""Independent reference computations used to freeze expected values.

Everything here is written from first principles in plain Python/numpy and
deliberately shares no code with the package under test.
"""

import math

import numpy as np


def pair_delays(ta, tb):
    """All t_b - t_a for the tiny streams used in unit tests."""
    return [b - a for a in ta for b in tb]


def histogram_by_scan(delays, edges, fold=False):
    out = [0] * (len(edges) - 1)
    for d in delays:
        if fold:
            d = abs(d)
        for k in range(len(edges) - 1):
            if edges[k] <= d < edges[k + 1]:
                out[k] += 1
                break
    return out


def two_state_second_moment(p_b, i_b, i_d):
    p_d = 1.0 - p_b
    return (p_b * i_b**2 + p_d * i_d**2) / (p_b * i_b + p_d * i_d) ** 2


def poisson_band(mean, n_sigma):
    half = n_sigma * math.sqrt(mean)
    return mean - half, mean + half


def uniform_pair_expectation(lo, hi, n_a, n_b, t_span):
    """Expected folded pair count in [lo, hi) for two independent uniform processes.

    Integrates the triangular density of |t_b - t_a| for points dropped
    uniformly on [0, T]: p(d) = 2 (T - d) / T**2 per unordered sign.
    """
    def cdf(x):
        return (2.0 * x * t_span - x * x) / t_span**2

    return n_a * n_b * (cdf(hi) - cdf(lo))


def expected_state_signature(model, sync_rate, bin_time):
    """Per-state (counts per bin, mean arrival time) of the simulated emitter.

    Built from the per-pulse emission probabilities: the last-exciton photon
    with the state lifetime, the cascade photon with a quarter of it, and
    uniformly distributed background.
    """
    lam = model.power_ratio * model.mean_excitons_at_sat
    p1 = 1.0 - math.exp(-lam)
    p2 = 1.0 - math.exp(-lam) * (1.0 + lam)
    eta = model.detection_efficiency
    period = 1.0 / sync_rate
    out = {}
    for name, qy, tau in (
        ("bright", model.qy_bright, model.lifetime_bright),
        ("dim", model.qy_dim, model.lifetime_dim),
    ):
        x = p1 * qy * eta
        y = p2 * model.biexciton_qy * eta
        sig_rate = (x + y) * sync_rate
        bg_rate = 2.0 * model.background_rate
        mean_sig = model.irf_offset + (x * tau + y * tau / model.biexciton_lifetime_factor) / (x + y)
        mean = (sig_rate * mean_sig + bg_rate * period / 2) / (sig_rate + bg_rate)
        out[name] = ((sig_rate + bg_rate) * bin_time, mean)
    return out


def gaussian_kde_at(points_x, points_y, hx, hy, gx, gy):
    """Direct evaluation of a product Gaussian KDE at grid points (no cell integration)."""
    zx = (gx[None, :] - points_x[:, None]) / hx
    zy = (gy[None, :] - points_y[:, None]) / hy
    kx = np.exp(-0.5 * zx**2) / (hx * math.sqrt(2 * math.pi))
    ky = np.exp(-0.5 * zy**2) / (hy * math.sqrt(2 * math.pi))
    return ky.T @ kx / points_x.size


def saturation_curve(p, a, b, p_sat):
    return a * (1 - np.exp(-np.asarray(p) / p_sat)) + b * np.asarray(p)


def gaussian_spectrum(wl, center, fwhm, amplitude=1.0, baseline=0.0):
    sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
    return baseline + amplitude * np.exp(-0.5 * ((np.asarray(wl) - center) / sigma) ** 2)


def spearman(a, b):
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    return float(np.corrcoef(ra, rb)[0, 1])
