"""Monte Carlo photon streams from a blinking two-state emitter.

The emitter switches between a bright (neutral exciton) and a dim (charged,
trion) state as a continuous-time telegraph process. Under pulsed excitation
each pulse creates a Poisson number of excitons; the last exciton emits with
the quantum yield of the current state, and a second exciton can add an
earlier, Auger-shortened cascade photon. Photons are split 50/50 onto the two
arms of a Hanbury Brown-Twiss setup, and each detector adds its own Poisson
background.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import InvalidModel
from .stream import Origin, PhotonStream, StreamHeader

DEFAULT_SYNC_RATE = 2.5e6
DEFAULT_MICROTIME_RESOLUTION = 126e-12

SOURCE_BRIGHT = 0
SOURCE_DIM = 1
SOURCE_BRIGHT_CASCADE = 2
SOURCE_DIM_CASCADE = 3
SOURCE_BACKGROUND = 4

# pulses handled per chunk; bounds memory of the candidate arrays
_CHUNK_PULSES = 1 << 24


@dataclass(frozen=True)
class EmitterModel:
    """Physical parameters of the simulated emitter and detection path.

    Times are in seconds and rates in Hz. ``power_ratio`` is P/P_sat, and the
    mean exciton number per pulse is ``power_ratio * mean_excitons_at_sat``.
    The cascade photon's lifetime is ``lifetime / biexciton_lifetime_factor``.
    ``irf_offset`` shifts every signal microtime so the Gaussian timing jitter
    stays inside the sync period.
    """

    lifetime_bright: float = 10.2e-9
    lifetime_dim: float = 1.3e-9
    qy_bright: float = 0.9
    qy_dim: float = 0.25
    rate_charge: float = 1e4
    rate_discharge: float = 1e4
    mean_excitons_at_sat: float = 1.0
    power_ratio: float = 1.0
    biexciton_qy: float = 0.04
    background_rate: float = 0.0
    detection_efficiency: float = 0.01
    irf_sigma: float = 50e-12
    irf_offset: float = 2e-9
    biexciton_lifetime_factor: float = 4.0

    def validate(self) -> None:
        positive = (
            "lifetime_bright",
            "lifetime_dim",
            "rate_charge",
            "rate_discharge",
            "mean_excitons_at_sat",
            "power_ratio",
            "biexciton_lifetime_factor",
        )
        for name in positive:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidModel(f"{name} must be positive, got {v}", name)
        for name in ("qy_bright", "qy_dim", "biexciton_qy"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise InvalidModel(f"{name} must lie in [0, 1], got {v}", name)
        if not 0 < self.detection_efficiency <= 1:
            raise InvalidModel("detection_efficiency must lie in (0, 1]", "detection_efficiency")
        for name in ("background_rate", "irf_sigma", "irf_offset"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidModel(f"{name} must be non-negative, got {v}", name)
        if self.lifetime_dim >= self.lifetime_bright:
            raise InvalidModel("lifetime_dim must be shorter than lifetime_bright", "lifetime_dim")

    @property
    def mean_excitons(self) -> float:
        return self.power_ratio * self.mean_excitons_at_sat

    @property
    def bright_occupancy(self) -> float:
        return self.rate_discharge / (self.rate_charge + self.rate_discharge)

    @property
    def switching_rate(self) -> float:
        """Relaxation rate of the telegraph correlation, k_c + k_d."""
        return self.rate_charge + self.rate_discharge

    def exciton_probabilities(self) -> tuple[float, float]:
        """P(n >= 1) and P(n >= 2) for the Poisson exciton number."""
        lam = self.mean_excitons
        p0 = math.exp(-lam)
        return 1.0 - p0, 1.0 - p0 * (1.0 + lam)

    def photons_per_pulse(self, state: int) -> float:
        """Mean detected signal photons per pulse (both detectors) in a state."""
        p1, p2 = self.exciton_probabilities()
        qy = self.qy_bright if state == 0 else self.qy_dim
        return self.detection_efficiency * (p1 * qy + p2 * self.biexciton_qy)


@dataclass(frozen=True)
class SimulationConfig:
    model: EmitterModel = field(default_factory=EmitterModel)
    header: StreamHeader = field(
        default_factory=lambda: StreamHeader(
            DEFAULT_SYNC_RATE, DEFAULT_MICROTIME_RESOLUTION, 1.0 / DEFAULT_SYNC_RATE, 1.0
        )
    )
    seed: int = 0
    duration: float = 1.0

    def validate(self) -> None:
        self.model.validate()
        h = self.header
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise InvalidModel(f"duration must be positive, got {self.duration}", "duration")
        if not 0 <= self.seed < 2**64:
            raise InvalidModel("seed must be an unsigned 64-bit integer", "seed")
        if h.channel_count < 2:
            raise InvalidModel("simulation needs two detector channels", "channel_count")
        if not math.isclose(h.macrotime_resolution, h.sync_period, rel_tol=1e-12):
            raise InvalidModel(
                "simulated streams count macrotime in sync periods; "
                "macrotime_resolution must equal 1/sync_rate",
                "macrotime_resolution",
            )
        if 10 * self.model.lifetime_bright >= h.sync_period:
            raise InvalidModel("lifetime_bright is not short against the sync period", "lifetime_bright")


@dataclass(frozen=True)
class SimulationTruth:
    """Per-record ground truth returned by :func:`simulate_with_truth`."""

    source: np.ndarray
    pulse: np.ndarray
    bright_time_fraction: float


def _stationary_state(rng, model):
    return 0 if rng.random() < model.bright_occupancy else 1


def _telegraph_chunk(rng, state, t_len, model):
    """Switch times in [0, t_len) starting from ``state`` at time 0.

    Residence times are exponential; the current residence is redrawn at the
    chunk start, which is exact because the process is memoryless.
    Returns (switch_times, end_state, bright_time).
    """
    rates = (model.rate_charge, model.rate_discharge)
    mean_cycle = 1.0 / rates[0] + 1.0 / rates[1]
    switches = []
    t = 0.0
    bright = 0.0
    while True:
        n = int(2 * t_len / mean_cycle + 6 * math.sqrt(t_len / mean_cycle + 1) + 16)
        scale = np.empty(n)
        scale[0::2] = 1.0 / rates[state]
        scale[1::2] = 1.0 / rates[1 - state]
        dur = rng.exponential(scale)
        ends = t + np.cumsum(dur)
        inside = ends < t_len
        k = int(np.count_nonzero(inside))
        starts = np.concatenate(([t], ends[:-1]))
        seg_end = np.minimum(ends, t_len)
        seg_state = np.empty(n, dtype=np.int8)
        seg_state[0::2] = state
        seg_state[1::2] = 1 - state
        upto = min(k + 1, n)
        bright += float(np.sum((seg_end - starts)[:upto][seg_state[:upto] == 0]))
        switches.append(ends[:k])
        if k < n:
            end_state = state if k % 2 == 0 else 1 - state
            return np.concatenate(switches), end_state, bright
        t = float(ends[-1])
        state = state if n % 2 == 0 else 1 - state


def _bernoulli_positions(rng, n, p):
    """Sorted indices in [0, n) of successes of n Bernoulli(p) trials."""
    if p <= 0 or n <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(n, dtype=np.int64)
    out = []
    pos = -1
    mean = n * p
    while True:
        m = int(mean + 6 * math.sqrt(mean) + 16)
        gaps = rng.geometric(p, size=m)
        idx = pos + np.cumsum(gaps)
        keep = idx[idx < n]
        out.append(keep)
        if keep.size < m:
            return np.concatenate(out)
        pos = int(idx[-1])


def _emission_tables(model):
    """Per-state probabilities of (exciton only, cascade only, both) per pulse."""
    p1, p2 = model.exciton_probabilities()
    eta = model.detection_efficiency
    y = p2 * model.biexciton_qy * eta
    tables = []
    for qy in (model.qy_bright, model.qy_dim):
        x = p1 * qy * eta
        both = p2 * qy * eta * model.biexciton_qy * eta
        tables.append((x - both, y - both, both))
    return tables


def simulate_with_truth(config: SimulationConfig) -> tuple[PhotonStream, SimulationTruth]:
    """Simulate a photon stream and return it with per-record ground truth."""
    config.validate()
    model = config.model
    h = replace(config.header, duration=float(config.duration), origin=Origin.SIMULATED)
    period = h.sync_period
    n_pulses = int(math.floor(config.duration * h.sync_rate))
    n_chunks = max(1, -(-n_pulses // _CHUNK_PULSES))

    root = np.random.SeedSequence(config.seed)
    tele_seq, *chunk_seqs = root.spawn(n_chunks + 1)
    tele_rng = np.random.default_rng(tele_seq)

    tables = _emission_tables(model)
    p_any = [sum(t) for t in tables]
    p_max = max(p_any)
    lifetimes = (model.lifetime_bright, model.lifetime_dim)

    times, channels, sources, pulses = [], [], [], []
    state = _stationary_state(tele_rng, model)
    bright_time = 0.0
    for c in range(n_chunks):
        rng = np.random.default_rng(chunk_seqs[c])
        k0 = c * _CHUNK_PULSES
        k1 = min(n_pulses, k0 + _CHUNK_PULSES)
        t0 = k0 * period
        t_len = (k1 - k0) * period if c < n_chunks - 1 else config.duration - t0
        switch, end_state, bt = _telegraph_chunk(tele_rng, state, t_len, model)
        bright_time += bt

        cand = _bernoulli_positions(rng, k1 - k0, p_max)
        n_flips = np.searchsorted(switch, cand * period, side="right")
        st = np.where(n_flips % 2 == 0, state, 1 - state).astype(np.int8)
        state = end_state

        u = rng.random(cand.size)
        accept = u * p_max < np.where(st == 0, p_any[0], p_any[1])
        cand, st, u = cand[accept], st[accept], u[accept]
        # classify each emitting pulse: exciton only / cascade only / both
        x_only = np.where(st == 0, tables[0][0], tables[1][0])
        y_only = np.where(st == 0, tables[0][1], tables[1][1])
        r = u * p_max
        has_x = (r < x_only) | (r >= x_only + y_only)
        has_y = r >= x_only

        tau = np.where(st == 0, lifetimes[0], lifetimes[1])
        kx = cand[has_x]
        dx = rng.exponential(tau[has_x])
        ky = cand[has_y]
        dy = rng.exponential(tau[has_y] / model.biexciton_lifetime_factor)
        delay = np.concatenate((dx, dy)) + model.irf_offset
        if model.irf_sigma > 0:
            delay += rng.normal(0.0, model.irf_sigma, delay.size)
        kk = np.concatenate((kx, ky)) + k0
        src = np.concatenate((st[has_x], st[has_y] + 2)).astype(np.uint8)
        t_sig = kk * period + delay
        ch_sig = (rng.random(t_sig.size) < 0.5).astype(np.uint8)

        t_bg, ch_bg = [], []
        if model.background_rate > 0:
            for ch in range(2):
                nb = rng.poisson(model.background_rate * t_len)
                t_bg.append(t0 + rng.random(nb) * t_len)
                ch_bg.append(np.full(nb, ch, dtype=np.uint8))
        t_bg = np.concatenate(t_bg) if t_bg else np.empty(0)
        ch_bg = np.concatenate(ch_bg) if ch_bg else np.empty(0, dtype=np.uint8)

        times.append(np.concatenate((t_sig, t_bg)))
        channels.append(np.concatenate((ch_sig, ch_bg)))
        sources.append(np.concatenate((src, np.full(t_bg.size, SOURCE_BACKGROUND, dtype=np.uint8))))
        pulses.append(np.concatenate((kk, np.floor(t_bg / period).astype(np.int64))))

    t = np.concatenate(times)
    ch = np.concatenate(channels)
    src = np.concatenate(sources)
    pulse = np.concatenate(pulses)
    keep = (t >= 0) & (t < config.duration)
    t, ch, src, pulse = t[keep], ch[keep], src[keep], pulse[keep]

    macro = np.floor(t / period).astype(np.int64)
    micro = np.floor((t - macro * period) / h.microtime_resolution).astype(np.int64)
    # float rounding can land a photon exactly on the next sync edge
    micro = np.clip(micro, 0, h.max_microtime)
    order = np.lexsort((ch, micro, macro))
    macro, micro, ch, src, pulse = macro[order], micro[order], ch[order], src[order], pulse[order]
    if macro.size > 1:
        # same detector, same tick: a single detection event
        dup = np.concatenate(
            ([False], (macro[1:] == macro[:-1]) & (micro[1:] == micro[:-1]) & (ch[1:] == ch[:-1]))
        )
        if dup.any():
            macro, micro, ch, src, pulse = (a[~dup] for a in (macro, micro, ch, src, pulse))

    stream = PhotonStream(h, ch, macro, micro, validate=False)
    truth = SimulationTruth(
        source=src,
        pulse=pulse,
        bright_time_fraction=bright_time / config.duration,
    )
    return stream, truth


def simulate(config: SimulationConfig) -> PhotonStream:
    """Simulate the photon stream described by ``config``.

    The output depends only on ``config``; equal configs (seed included)
    give bit-identical streams.
    """
    return simulate_with_truth(config)[0]


def analytic_flicker_plateau(model: EmitterModel, sync_rate: float = DEFAULT_SYNC_RATE) -> float:
    """Short-delay bunching level <I^2>/<I>^2 of the two-state telegraph.

    Per-detector intensity in each state is the detected signal rate plus the
    detector's background rate.
    """
    model.validate()
    p_b = model.bright_occupancy
    p_d = 1.0 - p_b
    i_b = 0.5 * sync_rate * model.photons_per_pulse(0) + model.background_rate
    i_d = 0.5 * sync_rate * model.photons_per_pulse(1) + model.background_rate
    mean = p_b * i_b + p_d * i_d
    if mean <= 0:
        raise InvalidModel("model emits no photons; the plateau is undefined")
    return (p_b * i_b**2 + p_d * i_d**2) / mean**2


def flicker_correlation_time(model: EmitterModel) -> float:
    return 1.0 / model.switching_rate


def analytic_peak_areas(
    model: EmitterModel,
    header: StreamHeader,
    duration: float,
    peak_halfwidth: float,
    span: int = 10,
) -> dict:
    """Expected coincidence counts in the pulsed A x B histogram.

    Returns the central and per-lag side peak areas (counts integrated over a
    window of +/- ``peak_halfwidth``), split into signal and background parts.
    Used to choose model parameters for a target g2(0).
    """
    model.validate()
    period = header.sync_period
    n_pulses = duration / period
    p_b = model.bright_occupancy
    p_d = 1.0 - p_b
    m_b = model.photons_per_pulse(0)
    m_d = model.photons_per_pulse(1)
    m = p_b * m_b + p_d * m_d
    p1, p2 = model.exciton_probabilities()
    eta = model.detection_efficiency
    qy_mean = p_b * model.qy_bright + p_d * model.qy_dim
    # both photons of a cascade detected, one on each arm
    central_signal = n_pulses * 0.5 * p2 * qy_mean * eta * model.biexciton_qy * eta
    k = model.switching_rate
    lags = np.arange(1, span + 1)
    cov = p_b * p_d * (m_b - m_d) ** 2 * np.exp(-k * lags * period)
    side_signal = n_pulses * 0.25 * (m**2 + cov)
    # uniform background pairs: background x everything on the other arm
    sig_rate = 0.5 * m / period
    bg = model.background_rate
    window_bg = duration * 2 * peak_halfwidth * (bg * (sig_rate + bg) + sig_rate * bg)
    return {
        "central_signal": float(central_signal),
        "side_signal": side_signal,
        "window_background": float(window_bg),
    }


def analytic_g2_zero(
    model: EmitterModel,
    header: StreamHeader,
    peak_halfwidth: float = 50e-9,
    span: int = 10,
    background: bool = True,
) -> float:
    """Expected raw central/side peak-area ratio for the pulsed histogram."""
    areas = analytic_peak_areas(model, header, 1.0, peak_halfwidth, span)
    bgw = areas["window_background"] if background else 0.0
    return (areas["central_signal"] + bgw) / (float(np.mean(areas["side_signal"])) + bgw)


# -- config files ------------------------------------------------------------------

_MODEL_FIELDS = {f.name for f in fields(EmitterModel)}
_HEADER_FIELDS = {"sync_rate", "microtime_resolution", "macrotime_resolution", "channel_count"}


def _coerce(name, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise InvalidModel(f"{name}: cannot interpret {value!r} as {kind.__name__}", name) from None


def config_from_mapping(data: dict) -> SimulationConfig:
    """Build a config from ``{"model": {...}, "header": {...}, "seed", "duration"}``.

    Unknown keys are rejected so that typos surface as errors.
    """
    data = dict(data)
    model_kw = dict(data.pop("model", {}) or {})
    header_kw = dict(data.pop("header", {}) or {})
    sim_kw = dict(data.pop("simulation", {}) or {})
    sim_kw.update(data)
    for name in model_kw:
        if name not in _MODEL_FIELDS:
            raise InvalidModel(f"unknown model field {name!r}", name)
    for name in header_kw:
        if name not in _HEADER_FIELDS:
            raise InvalidModel(f"unknown header field {name!r}", name)
    for name in sim_kw:
        if name not in ("seed", "duration"):
            raise InvalidModel(f"unknown simulation field {name!r}", name)
    model = EmitterModel(**{k: _coerce(k, v, float) for k, v in model_kw.items()})
    sync = _coerce("sync_rate", header_kw.get("sync_rate", DEFAULT_SYNC_RATE), float)
    try:
        header = StreamHeader(
            sync_rate=sync,
            microtime_resolution=_coerce(
                "microtime_resolution",
                header_kw.get("microtime_resolution", DEFAULT_MICROTIME_RESOLUTION),
                float,
            ),
            macrotime_resolution=_coerce(
                "macrotime_resolution", header_kw.get("macrotime_resolution", 1.0 / sync if sync else 1.0), float
            ),
            duration=0.0,
            channel_count=_coerce("channel_count", header_kw.get("channel_count", 2), int),
        )
    except ValueError as exc:
        raise InvalidModel(str(exc), "header") from None
    seed_raw = sim_kw.get("seed", 0)
    if isinstance(seed_raw, float) or (isinstance(seed_raw, str) and not seed_raw.strip().isdigit()):
        raise InvalidModel(f"seed: expected a non-negative integer, got {seed_raw!r}", "seed")
    config = SimulationConfig(
        model=model,
        header=header,
        seed=_coerce("seed", seed_raw, int),
        duration=_coerce("duration", sim_kw.get("duration", 1.0), float),
    )
    config.validate()
    return config


def config_to_mapping(config: SimulationConfig) -> dict:
    h = config.header
    return {
        "model": {f.name: getattr(config.model, f.name) for f in fields(EmitterModel)},
        "header": {
            "sync_rate": h.sync_rate,
            "microtime_resolution": h.microtime_resolution,
            "macrotime_resolution": h.macrotime_resolution,
            "channel_count": h.channel_count,
        },
        "simulation": {"seed": config.seed, "duration": config.duration},
    }


def load_config(path) -> SimulationConfig:
    """Read a simulation config from JSON or an INI-style key = value file.

    INI files use ``[model]``, ``[header]`` and ``[simulation]`` sections.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidModel(f"invalid JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidModel("config root must be an object")
        return config_from_mapping(data)
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidModel(f"invalid config file: {exc}") from None
    data = {}
    for section in parser.sections():
        if section not in ("model", "header", "simulation"):
            raise InvalidModel(f"unknown config section [{section}]", section)
        data[section] = dict(parser[section])
    return config_from_mapping(data)
