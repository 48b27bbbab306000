"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line (collected in the terminal summary under
"acceptance criteria") and then asserts on the same condition.
"""

import json
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import record_acceptance
from oracles import expected_state_signature, saturation_curve
from photonstat.cli import main
from photonstat.correlate import (
    correlate_brute_force,
    correlate_long_delay,
    correlate_pulsed,
    fit_flicker,
    subtract_background,
)
from photonstat.flid import find_modes, flid_from_stream, second_moment_spread
from photonstat.sim import EmitterModel, SimulationConfig, analytic_flicker_plateau, config_to_mapping, simulate
from photonstat.stream import decode_stream, encode_stream
from photonstat.trace import LABEL_HIGH, LABEL_LOW, bin_intensity, decay_histogram, fit_decay, fit_saturation, segment_states
from strategies import streams

pytestmark = pytest.mark.slow


def report(number, ok, text):
    record_acceptance(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {text}")


# -- 1: antibunching purity --------------------------------------------------------

# calibrated so the background-free g2(0) is 0.08 and the raw value 0.20
PURITY_MODEL = EmitterModel(biexciton_qy=0.048)
PURITY_BACKGROUND = 1900.0


def test_criterion_1_purity_round_trip(tmp_path):
    t0 = time.perf_counter()
    noisy = SimulationConfig(model=replace(PURITY_MODEL, background_rate=PURITY_BACKGROUND), seed=11, duration=600.0)
    config_path = tmp_path / "purity.json"
    config_path.write_text(json.dumps(config_to_mapping(noisy)))
    pstr = tmp_path / "purity.pstr"
    assert main(["simulate", str(config_path), str(pstr)]) == 0
    assert main(["g2", str(pstr), "--out", str(tmp_path)]) == 0
    r = json.loads((tmp_path / "g2_pulsed.json").read_text())["purity"]
    elapsed = time.perf_counter() - t0

    # diagnostics: the same seed without background, and the per-bin variant
    truth = subtract_background(correlate_pulsed(simulate(replace(noisy, model=PURITY_MODEL)), 1e-9)).g2_zero_raw
    per_bin = subtract_background(correlate_pulsed(simulate(noisy), 1e-9), per_bin=True).g2_zero_corrected
    ok = abs(r["g2_zero_corrected"] - 0.08) <= 0.02 and elapsed < 120
    report(
        1,
        ok,
        f"purity: corrected g2(0) {r['g2_zero_corrected']:.4f} +- {r['uncertainty']:.4f} (target 0.08 +- 0.02); "
        f"raw {r['g2_zero_raw']:.4f}, background-free rerun {truth:.4f}, per-bin {per_bin:.4f}; {elapsed:.0f} s",
    )
    assert abs(truth - 0.08) < 0.01, "calibration drifted: background-free g2(0) is not 0.08"
    assert abs(r["g2_zero_raw"] - 0.2) < 0.02, "calibration drifted: raw g2(0) is not 0.2"
    assert ok


# -- 2 and 8: flicker plateau and long-delay performance ---------------------------

FLICKER_MODEL = EmitterModel(rate_charge=5e4, rate_discharge=5e4, qy_dim=0.35385)


@pytest.fixture(scope="module")
def flicker_stream():
    t0 = time.perf_counter()
    s = simulate(SimulationConfig(model=FLICKER_MODEL, seed=5, duration=1000.0))
    return s, time.perf_counter() - t0


def test_criterion_2_flicker_plateau(flicker_stream):
    s, sim_time = flicker_stream
    target = analytic_flicker_plateau(FLICKER_MODEL)
    t0 = time.perf_counter()
    hist = correlate_long_delay(s)
    fit = fit_flicker(hist)
    elapsed = sim_time + time.perf_counter() - t0
    k = FLICKER_MODEL.switching_rate
    lo, hi = hist.bin_edges[:-1], hist.bin_edges[1:]
    g = hist.g2
    short = (lo >= 0.5 * hist.sync_period) & (hi <= 1 / (10 * k))
    short_mean = float(np.average(g[short], weights=hist.normalization[short]))
    far = lo > 100e-6
    plateau = fit.info["plateau"]
    ok = (
        abs(target - 1.18) < 1e-3
        and abs(plateau - 1.18) <= 0.02
        and abs(short_mean - 1.18) <= 0.02
        and bool(np.all((g[far] >= 0.98) & (g[far] <= 1.02)))
        and len(s) >= 1e7
        and elapsed < 180
    )
    report(
        2,
        ok,
        f"flicker: plateau 1 + A_f = {plateau:.4f} +- {fit.uncertainties['A_f']:.4f}, "
        f"bins below {1e6 / (10 * k):.0f} us {short_mean:.4f} (target {target:.4f} +- 0.02); "
        f"g2 beyond 100 us in [{g[far].min():.4f}, {g[far].max():.4f}]; tau_f {fit['tau_f'] * 1e6:.2f} us; "
        f"{len(s):.2e} photons, {elapsed:.0f} s",
    )
    assert ok


# -- 3: oracle equality ------------------------------------------------------------


def oracle_stream(seed):
    """Simulated stream with random model parameters and about 1e4 photons."""
    rng = np.random.default_rng(seed)
    m = EmitterModel(
        rate_charge=10 ** rng.uniform(1, 5),
        rate_discharge=10 ** rng.uniform(1, 5),
        qy_dim=rng.uniform(0.05, 0.8),
        biexciton_qy=rng.uniform(0, 0.2),
        background_rate=rng.uniform(0, 3000),
        power_ratio=rng.uniform(0.25, 3),
    )
    # scale detection from a short pilot run so the stream holds ~1e4 photons
    rate = len(simulate(SimulationConfig(model=m, seed=seed, duration=0.05))) / 0.05
    eta = min(1.0, m.detection_efficiency * 1e4 / (rate * 2.0))
    m = replace(m, detection_efficiency=eta, background_rate=m.background_rate * eta / m.detection_efficiency)
    return simulate(SimulationConfig(model=m, seed=seed, duration=2.0))


def compare_long_delay(hist, brute):
    """(exact bins identical, worst relative deviation and count of multi-tau bins)."""
    level = np.asarray(hist.meta["cascade_level"])
    direct = level == 0
    same = bool(np.array_equal(hist.counts[direct], brute.counts[direct]))
    use = ~direct & (brute.counts > 0)
    rel = np.abs(hist.counts[use].astype(float) - brute.counts[use]) / np.maximum(brute.counts[use], 1)
    return same, float(rel.max()) if rel.size else 0.0, int(use.sum())


def test_criterion_3_oracle_equality():
    t0 = time.perf_counter()
    sizes, pulsed_ok, exact_ok, worst = [], True, True, 0.0
    cascade_bins = 0
    for seed in range(50):
        s = oracle_stream(seed)
        sizes.append(len(s))
        p = correlate_pulsed(s, 1e-9)
        pulsed_ok &= bool(np.array_equal(p.counts, correlate_brute_force(s, p.bin_edges).counts))
        # default thresholds, then a lower one that pushes more bins through the cascade
        for min_count in (None, 2000):
            kw = {} if min_count is None else {"min_count": min_count}
            d = correlate_long_delay(s, decades=(1e-8, 0.1), **kw)
            same, rel, n = compare_long_delay(d, correlate_brute_force(s, d.bin_edges, fold=True))
            exact_ok &= same
            worst = max(worst, rel)
            cascade_bins += n
    elapsed = time.perf_counter() - t0
    ok = pulsed_ok and exact_ok and worst < 0.02 and cascade_bins > 0 and elapsed < 60
    report(
        3,
        ok,
        f"oracle: 50 streams of {min(sizes)}-{max(sizes)} photons; pulsed identical {pulsed_ok}, "
        f"directly counted long-delay bins identical {exact_ok}, multi-tau max deviation {100 * worst:.2f}% over "
        f"{cascade_bins} bins; {elapsed:.0f} s",
    )
    assert ok


# -- 4: state-resolved lifetimes ---------------------------------------------------

LIFETIME_MODEL = EmitterModel(rate_charge=5.0, rate_discharge=5.0)


def test_criterion_4_state_resolved_lifetimes():
    m = LIFETIME_MODEL
    err1, err2 = [], []
    for seed in range(20):
        s = simulate(SimulationConfig(model=m, seed=200 + seed, duration=60.0))
        seg = segment_states(bin_intensity(s, 10e-3))
        err1.append(fit_decay(decay_histogram(s, seg, LABEL_HIGH), "mono")["tau1"] / m.lifetime_bright - 1)
        err2.append(fit_decay(decay_histogram(s, seg, LABEL_LOW), "mono")["tau1"] / m.lifetime_dim - 1)
    err1, err2 = np.abs(err1), np.abs(err2)

    # coverage: single-state emitter, so the truth is exactly the bright lifetime
    bright_only = EmitterModel(rate_charge=1e-6, rate_discharge=1e6, biexciton_qy=0.0)
    z = []
    for seed in range(100):
        s = simulate(SimulationConfig(model=bright_only, seed=1000 + seed, duration=1.0))
        fit = fit_decay(decay_histogram(s), "mono")
        z.append((fit["tau1"] - bright_only.lifetime_bright) / fit.uncertainties["tau1"])
    coverage = float(np.mean(np.abs(z) <= 1))
    ok = err1.max() < 0.05 and err2.max() < 0.05 and abs(coverage - 0.68) <= 0.10
    report(
        4,
        ok,
        f"lifetimes: worst |tau1 error| {100 * err1.max():.2f}%, worst |tau2 error| {100 * err2.max():.2f}% "
        f"over 20 seeds (limit 5%); coverage {100 * coverage:.0f}% of 100 (target 68 +- 10%)",
    )
    assert ok


# -- 5: saturation fit -------------------------------------------------------------

POWER_GRID = np.array([0.25, 0.5, 1.0, 1.5, 2.0, 3.0])


def saturation_fixture(seed):
    rng = np.random.default_rng(seed)
    i = saturation_curve(POWER_GRID, 1e5, 1e3, 1.0) * (1 + 0.02 * rng.standard_normal(POWER_GRID.size))
    return np.column_stack((POWER_GRID, i))


def test_criterion_5_saturation_fit():
    fit = fit_saturation(saturation_fixture(0))
    e_p, e_a = abs(fit["P_sat"] - 1), abs(fit["A"] / 1e5 - 1)
    ok = e_p < 0.05 and e_a < 0.05
    # how often a fresh 2% draw meets the same bar (diagnostic only)
    hits = []
    for seed in range(1, 201):
        f = fit_saturation(saturation_fixture(seed))
        hits.append(abs(f["P_sat"] - 1) < 0.05 and abs(f["A"] / 1e5 - 1) < 0.05)
    report(
        5,
        ok,
        f"saturation: P_sat error {100 * e_p:.2f}%, A error {100 * e_a:.2f}% (limit 5%) on the seed-0 fixture; "
        f"P_sat +- {100 * fit.uncertainties['P_sat']:.1f}%; {100 * np.mean(hits):.0f}% of 200 other draws pass",
    )
    assert ok


# -- 6: FLID -----------------------------------------------------------------------


def test_criterion_6_flid():
    base = EmitterModel(rate_charge=5.0, rate_discharge=5.0)
    s = simulate(SimulationConfig(model=base, seed=1, duration=60.0))
    fmap = flid_from_stream(s)
    modes = find_modes(fmap)
    expect = expected_state_signature(base, s.header.sync_rate, 10e-3)
    hx, hy = fmap.bandwidths
    placed = False
    if len(modes) == 2:
        dim, bright = sorted(modes, key=lambda md: md.intensity)
        placed = all(
            abs(md.intensity - expect[name][0]) < hx and abs(md.lifetime - expect[name][1]) < hy
            for md, name in ((bright, "bright"), (dim, "dim"))
        )
    # extra blinking at 3 x P_sat: the emitter spends more time charged
    elevated = replace(base, power_ratio=3.0, rate_charge=15.0)
    spread_sat = second_moment_spread(fmap)
    spread_hi = second_moment_spread(flid_from_stream(simulate(SimulationConfig(model=elevated, seed=1, duration=60.0))))
    norm_err = abs(fmap.total_mass - 1)
    ok = norm_err <= 1e-6 and len(modes) == 2 and placed and spread_hi > spread_sat
    found = ", ".join(f"({md.intensity:.0f}, {md.lifetime * 1e9:.2f} ns)" for md in modes)
    want = ", ".join(f"({v[0]:.0f}, {v[1] * 1e9:.2f} ns)" for v in (expect["dim"], expect["bright"]))
    report(
        6,
        ok,
        f"FLID: |mass - 1| = {norm_err:.1e}; {len(modes)} modes at {found} vs expected {want} "
        f"(bandwidth {hx:.1f}, {hy * 1e9:.2f} ns); spread {spread_sat:.3f} at P_sat, {spread_hi:.3f} at 3 P_sat",
    )
    assert ok


# -- 7: determinism and format -----------------------------------------------------


def run_pipeline(root, config_path):
    root.mkdir()
    pstr = root / "run.pstr"
    assert main(["simulate", str(config_path), str(pstr)]) == 0
    assert main(["g2", str(pstr), "--out", str(root)]) == 0
    assert main(["g2", str(pstr), "--mode", "long", "--tau-max", "0.1", "--out", str(root)]) == 0
    assert main(["trace", str(pstr), "--decays", "--out", str(root)]) == 0
    assert main(["flid", str(pstr), "--grid", "64", "--out", str(root)]) == 0
    return root


def test_criterion_7_determinism_and_format(tmp_path):
    cfg = SimulationConfig(model=EmitterModel(rate_charge=5.0, rate_discharge=5.0, background_rate=200.0), seed=9, duration=20.0)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config_to_mapping(cfg)))
    a = run_pipeline(tmp_path / "a", config_path)
    b = run_pipeline(tmp_path / "b", config_path)
    names = sorted(p.name for p in a.iterdir() if not p.name.endswith("manifest.json"))
    identical = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)

    failures = []

    @given(streams(max_records=300))
    @settings(max_examples=1000)
    def round_trip(s):
        data = encode_stream(s)
        back = decode_stream(data)
        assert back == s and encode_stream(back) == data

    try:
        round_trip()
    except Exception as exc:  # reported below, then re-raised through the assert
        failures.append(repr(exc))
    ok = identical and len(names) >= 12 and not failures
    report(
        7,
        ok,
        f"determinism: {len(names)} outputs of two seeded pipeline runs byte-identical {identical}; "
        f"PSTR round trip over 1000 random streams {'passed' if not failures else 'FAILED'}",
    )
    assert ok, failures


# -- 8: performance (timing reported, identity gated) ------------------------------

PARALLEL_SCRIPT = """
import hashlib
import numpy as np
from photonstat import _kernels
from photonstat.correlate import correlate_long_delay, correlate_pulsed
from photonstat.flid import flid_from_stream
from photonstat.sim import EmitterModel, SimulationConfig, simulate

s = simulate(SimulationConfig(model=EmitterModel(background_rate=500.0), seed=3, duration=60.0))
out = []
for n in (1, 4):
    _kernels.set_threads(n)
    h = hashlib.sha256()
    h.update(correlate_pulsed(s, 1e-9).counts.tobytes())
    h.update(correlate_long_delay(s, decades=(1e-8, 1.0)).counts.tobytes())
    h.update(flid_from_stream(s, grid=(128, 128)).density.tobytes())
    out.append(h.hexdigest())
print(len(s), _kernels.set_threads(), out[0], out[1])
"""


def test_criterion_8_performance(flicker_stream):
    s, _ = flicker_stream
    t0 = time.perf_counter()
    correlate_long_delay(s)
    elapsed = time.perf_counter() - t0
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    r = subprocess.run([sys.executable, "-c", PARALLEL_SCRIPT], capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    n, threads, serial, parallel = r.stdout.split()
    identical = serial == parallel
    cores = os.cpu_count()
    report(
        8,
        identical,
        f"performance: long-delay correlation of {len(s):.2e} records in {elapsed:.1f} s on {cores} core(s) "
        f"(budget 60 s on 4 cores, not gated: {'within' if elapsed < 60 else 'over'}); "
        f"1 vs {threads} threads identical {identical}",
    )
    assert identical
