"""Model fits shared by the analysis modules.

Decay curves are fitted by Poisson maximum likelihood with a small damped
Fisher-scoring loop; everything else goes through
:func:`scipy.optimize.least_squares`. Every fit returns a :class:`FitResult`
whose uncertainties are finite exactly when ``converged`` is true.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import FitDiverged, InsufficientCounts


@dataclass(frozen=True)
class FitResult:
    """Outcome of a model fit.

    Attributes:
        model_name: Identifier of the fitted model, e.g. ``"decay_mono"``.
        parameters: Best-fit values keyed by parameter name.
        uncertainties: 1-sigma errors with the same keys. All NaN when the fit
            did not converge.
        residual_norm: Norm of the weighted residual vector; see each fit for
            the weighting.
        converged: Optimizer criterion met and covariance finite.
        iterations: Optimizer iterations (or function evaluations).
        unconstrained: Parameters the data cannot determine; these are left
            out of ``parameters``.
        info: Fit window and other bookkeeping.
    """

    model_name: str
    parameters: dict
    uncertainties: dict
    residual_norm: float
    converged: bool
    iterations: int
    unconstrained: tuple = ()
    info: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.parameters[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "parameters": dict(self.parameters),
            "uncertainties": {k: _json_float(v) for k, v in self.uncertainties.items()},
            "residual_norm": _json_float(self.residual_norm),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "unconstrained": list(self.unconstrained),
            "info": {k: _jsonable(v) for k, v in self.info.items()},
        }


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return _json_float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


def _finalize(name, keys, values, cov, residual_norm, ok, iterations, info, unconstrained=()):
    sig = np.sqrt(np.diag(cov)) if cov is not None else np.full(len(keys), np.nan)
    converged = bool(ok and cov is not None and np.all(np.isfinite(sig)))
    if not converged:
        sig = np.full(len(keys), np.nan)
    return FitResult(
        model_name=name,
        parameters={k: float(v) for k, v in zip(keys, values)},
        uncertainties={k: float(s) for k, s in zip(keys, sig)},
        residual_norm=float(residual_norm),
        converged=converged,
        iterations=int(iterations),
        unconstrained=tuple(unconstrained),
        info=info,
    )


def _safe_inverse(m):
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(inv)) or np.any(np.diag(inv) < 0):
        return None
    return inv


# -- exponential decays ------------------------------------------------------------


def decay_model(t, amplitudes, lifetimes, background=0.0):
    """Sum of exponentials plus a constant, evaluated at ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, float(background))
    for a, tau in zip(amplitudes, lifetimes):
        out += a * np.exp(-t / tau)
    return out


def poisson_deviance(counts, expected) -> float:
    """Poisson deviance 2 * sum(mu - y + y * log(y / mu))."""
    y = np.asarray(counts, dtype=float)
    mu = np.asarray(expected, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(mu - y + term))


def _decay_design(t, theta, n_exp, with_bg):
    """Model and Jacobian in (A_i, log tau_i, bg) coordinates."""
    cols = []
    mu = np.zeros_like(t)
    for i in range(n_exp):
        a = theta[2 * i]
        tau = math.exp(theta[2 * i + 1])
        e = np.exp(-t / tau)
        mu += a * e
        cols.append(e)
        cols.append(a * e * t / tau)
    if with_bg:
        mu += theta[-1]
        cols.append(np.ones_like(t))
    return mu, np.column_stack(cols)


def _project(theta, n_exp, with_bg):
    theta = theta.copy()
    for i in range(n_exp):
        theta[2 * i] = max(theta[2 * i], 0.0)
    if with_bg:
        theta[-1] = max(theta[-1], 0.0)
    return theta


def _poisson_mle(t, y, theta0, n_exp, with_bg, max_iter=200, rtol=1e-9):
    """Damped Fisher scoring on the Poisson negative log-likelihood.

    Amplitudes and background are kept non-negative by projection; lifetimes
    are optimised on a log scale. Stops when an accepted step changes the
    deviance by less than ``rtol * max(deviance, 1)``.
    """
    floor = 1e-12
    theta = _project(np.asarray(theta0, dtype=float), n_exp, with_bg)
    mu, jac = _decay_design(t, theta, n_exp, with_bg)
    mu = np.maximum(mu, floor)
    dev = poisson_deviance(y, mu)
    lam = 1e-3
    ok = False
    it = 0
    while it < max_iter:
        it += 1
        w = 1.0 / mu
        grad = jac.T @ (1.0 - y * w)
        fisher = (jac * w[:, None]).T @ jac
        diag = np.diag(fisher).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(fisher + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = _project(theta + step, n_exp, with_bg)
            if np.any(np.abs(trial[1 : 2 * n_exp : 2]) > 700):
                lam *= 10
                continue
            mu_t, jac_t = _decay_design(t, trial, n_exp, with_bg)
            mu_t = np.maximum(mu_t, floor)
            dev_t = poisson_deviance(y, mu_t)
            if np.isfinite(dev_t) and dev_t <= dev:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no downhill step exists at any damping: a stationary point
            ok = True
            break
        change = dev - dev_t
        theta, mu, jac, dev = trial, mu_t, jac_t, dev_t
        lam = max(lam / 10, 1e-12)
        if change < rtol * max(dev, 1.0):
            ok = True
            break
    fisher = (jac / mu[:, None]).T @ jac
    return theta, mu, dev, fisher, it, ok


def _initial_decay(t, y, n_exp, with_bg):
    n = t.size
    bg = float(np.mean(y[-max(n // 10, 1) :])) if with_bg else 0.0
    sig = np.clip(y - bg, 0, None)
    total = sig.sum()
    if total <= 0:
        tau = max((t[-1] - t[0]) / 5, 1e-12)
        a = max(float(y[0]) - bg, 1e-3)
    else:
        tau = float(np.sum(sig * t) / total)
        tau = min(max(tau, (t[1] - t[0]) if n > 1 else 1e-12), max(t[-1], 1e-12))
        a = max(float(sig[: max(3, n // 50)].mean()), 1e-3)
    if n_exp == 1:
        theta = [a, math.log(tau)]
    else:
        theta = [0.5 * a, math.log(1.6 * tau), 0.5 * a, math.log(0.3 * tau)]
    if with_bg:
        theta.append(bg)
    return np.asarray(theta)


def fit_decay_curve(t, counts, n_exp=1, background=True, theta0=None) -> FitResult:
    """Poisson ML fit of ``sum_i A_i exp(-t / tau_i) + bg`` to binned counts.

    ``t`` holds bin times measured from the start of the fit window. Lifetimes
    are reported in descending order. The residual norm is the square root of
    the Poisson deviance at the optimum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(counts, dtype=float)
    if n_exp not in (1, 2):
        raise ValueError("n_exp must be 1 or 2")
    if y.sum() < 1000:
        raise InsufficientCounts(f"decay fit needs >= 1000 counts, got {int(y.sum())}")
    n_par = 2 * n_exp + int(background)
    if t.size <= n_par:
        raise InsufficientCounts("fit window has fewer bins than parameters")

    starts = [theta0] if theta0 is not None else []
    base = _initial_decay(t, y, n_exp, background)
    starts.append(base)
    if n_exp == 2 and theta0 is None:
        # bi-exponential likelihoods are multimodal; try a few lifetime splits
        mono = fit_decay_curve(t, y, 1, background)
        tau_m = mono.parameters["tau1"]
        a_m = mono.parameters["A1"]
        bg_m = [mono.parameters.get("bg", 0.0)] if background else []
        for f_long, f_short in ((1.2, 0.15), (1.5, 0.3), (2.0, 0.5), (1.05, 0.05)):
            starts.append(
                np.asarray(
                    [0.6 * a_m, math.log(f_long * tau_m), 0.6 * a_m, math.log(f_short * tau_m)] + bg_m
                )
            )

    best = None
    for s in starts:
        res = _poisson_mle(t, y, np.asarray(s, dtype=float), n_exp, background)
        if not np.isfinite(res[2]):
            continue
        if best is None or res[2] < best[2] - 1e-9 * max(best[2], 1.0):
            best = res
    if best is None:
        raise FitDiverged("decay fit produced no finite likelihood")
    theta, mu, dev, fisher, iters, ok = best

    cov = _safe_inverse(fisher)
    amps = [theta[2 * i] for i in range(n_exp)]
    taus = [math.exp(theta[2 * i + 1]) for i in range(n_exp)]
    # parameter errors in (A, tau) from the log-tau covariance
    scale = np.ones(n_par)
    for i in range(n_exp):
        scale[2 * i + 1] = taus[i]
    if cov is not None:
        cov = cov * np.outer(scale, scale)
    order = np.argsort(taus)[::-1]
    keys, values, idx = [], [], []
    for rank, i in enumerate(order, start=1):
        keys += [f"A{rank}", f"tau{rank}"]
        values += [amps[i], taus[i]]
        idx += [2 * i, 2 * i + 1]
    if background:
        keys.append("bg")
        values.append(theta[-1])
        idx.append(n_par - 1)
    if cov is not None:
        cov = cov[np.ix_(idx, idx)]
    return _finalize(
        "decay_mono" if n_exp == 1 else "decay_bi",
        keys,
        values,
        cov,
        math.sqrt(max(dev, 0.0)),
        ok,
        iters,
        {"deviance": dev, "n_bins": int(t.size)},
    )


# -- least squares -----------------------------------------------------------------


def least_squares_fit(
    name,
    keys,
    residual_fn,
    p0,
    *,
    bounds=(-np.inf, np.inf),
    absolute_sigma=False,
    transform=None,
    info=None,
):
    """Thin wrapper over :func:`scipy.optimize.least_squares`.

    ``residual_fn(p)`` must return the weighted residual vector. With
    ``absolute_sigma`` false the covariance is scaled by the reduced
    chi-square. ``transform(p) -> (values, jacobian)`` maps optimiser
    coordinates to reported parameters, e.g. from log scale.
    """
    p0 = np.asarray(p0, dtype=float)
    try:
        sol = optimize.least_squares(
            residual_fn, p0, bounds=bounds, method="trf", x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12
        )
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitDiverged(f"{name}: {exc}") from None
    if not np.all(np.isfinite(sol.x)) or not np.all(np.isfinite(sol.fun)):
        raise FitDiverged(f"{name}: optimizer left the finite domain")
    jac = sol.jac
    rss = float(sol.fun @ sol.fun)
    dof = sol.fun.size - p0.size
    cov = _safe_inverse(jac.T @ jac)
    if cov is not None and not absolute_sigma:
        cov = cov * (rss / dof if dof > 0 else np.inf)
    values = sol.x
    if transform is not None:
        values, tj = transform(sol.x)
        if cov is not None:
            cov = tj @ cov @ tj.T
    return _finalize(name, keys, values, cov, math.sqrt(rss), sol.success, sol.nfev, dict(info or {}))
