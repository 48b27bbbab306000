"""Command-line entry point: ``photonstat <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file-format
error, 4 analysis failure. Every successful run writes a JSON manifest next
to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .correlate import (
    DEFAULT_TAU_RANGE,
    correlate_long_delay,
    correlate_pulsed,
    fit_flicker,
    subtract_background,
)
from .errors import (
    AnalysisError,
    InsufficientPoints,
    InvalidModel,
    IoFailure,
    ParseError,
    StreamFormatError,
    Unimodal,
)
from .export import (
    read_table,
    write_histogram_csv,
    write_json,
    write_matrix_csv,
    write_pgm,
    write_ppm,
    write_table,
)
from .flid import build_flid, find_modes, second_moment_spread
from .sim import config_to_mapping, load_config, simulate
from .stream import read_stream, write_stream
from .trace import (
    DEFAULT_BIN_TIME,
    LABEL_HIGH,
    LABEL_LOW,
    bin_intensity,
    decay_histogram,
    fit_decay,
    fit_saturation,
    fit_spectrum,
    mean_arrival_trace,
    segment_states,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(args, inputs, outputs, params, seed, started, manifest_path):
    write_json(
        {
            "subcommand": args.command,
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
            "parameters": params,
            "tool_version": __version__,
            "seed": seed,
            "outputs": [str(p) for p in outputs],
            "wall_clock_s": time.perf_counter() - started,
            "threads": _kernels.set_threads(),
        },
        manifest_path,
    )


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc}") from None
    return out


def _read(path):
    if not Path(path).is_file():
        raise IoFailure(f"no such file: {path}")
    return read_stream(path)


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args, started):
    if not Path(args.config).is_file():
        raise IoFailure(f"no such config file: {args.config}")
    config = load_config(args.config)
    stream = simulate(config)
    out = Path(args.output)
    write_stream(stream, out)
    manifest = out.with_name(out.name + ".manifest.json")
    _manifest(
        args, [args.config], [out], config_to_mapping(config), config.seed, started, manifest
    )
    print(f"wrote {len(stream)} records to {out}")


def cmd_g2(args, started):
    stream = _read(args.stream)
    out = _out_dir(args)
    if args.mode == "pulsed":
        hist = correlate_pulsed(stream, args.bin_width, args.span, peak_halfwidth=args.peak_halfwidth)
        purity = subtract_background(hist, per_bin=args.per_bin)
        csv_path, json_path = out / "g2_pulsed.csv", out / "g2_pulsed.json"
        write_histogram_csv(hist, csv_path)
        write_json({"purity": purity.to_dict(), "histogram": _hist_meta(hist)}, json_path)
        print(f"g2(0) raw {purity.g2_zero_raw:.4f}, corrected {purity.g2_zero_corrected:.4f} +- {purity.uncertainty:.4f}")
    else:
        hist = correlate_long_delay(stream, (args.tau_min, args.tau_max), args.bins_per_decade)
        csv_path, json_path = out / "g2_long.csv", out / "g2_long.json"
        write_histogram_csv(hist, csv_path)
        doc = {"histogram": _hist_meta(hist)}
        try:
            doc["flicker"] = fit_flicker(hist).to_dict()
        except AnalysisError as exc:
            doc["flicker_error"] = str(exc)
        write_json(doc, json_path)
        print(f"long-delay g2 over {hist.counts.size} bins")
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _manifest(args, [args.stream], [csv_path, json_path], params, None, started, out / f"g2_{args.mode}.manifest.json")


def _hist_meta(hist):
    return {
        "mode": hist.mode,
        "total_starts": hist.total_starts,
        "total_stops": hist.total_stops,
        "span_s": hist.span,
        "sync_period_s": hist.sync_period,
        "bins": int(hist.counts.size),
        **hist.meta,
    }


def cmd_trace(args, started):
    stream = _read(args.stream)
    out = _out_dir(args)
    intensity = bin_intensity(stream, args.bin_time)
    lifetime = mean_arrival_trace(stream, args.bin_time, args.statistic)
    columns = {"time_s": intensity.times, "counts": intensity.counts, "mean_arrival_s": lifetime.mean_arrival}
    doc = {"bin_time_s": args.bin_time, "bins": len(intensity), "photons": int(intensity.counts.sum())}
    outputs = []
    if args.segment or args.decays:
        try:
            seg = segment_states(intensity)
        except Unimodal as exc:
            print(f"notice: {exc}; no state segmentation", file=sys.stderr)
            doc["segmentation"] = {"status": "unimodal", "message": str(exc)}
            seg = None
        if seg is not None:
            columns["label"] = seg.labels
            doc["segmentation"] = {
                "status": "ok",
                "threshold_low": seg.threshold_low,
                "threshold_high": seg.threshold_high,
                "weights": seg.weights,
                "means": seg.means,
                "sigmas": seg.sigmas,
                "fraction_low": seg.fraction(LABEL_LOW),
                "fraction_high": seg.fraction(LABEL_HIGH),
            }
            if args.decays:
                fits = {}
                for label, name in ((LABEL_HIGH, "high"), (LABEL_LOW, "low")):
                    hist = decay_histogram(stream, seg, label)
                    path = out / f"decay_{name}.csv"
                    write_table(path, {"time_s": hist.times, "counts": hist.counts})
                    outputs.append(path)
                    fits[name] = fit_decay(hist, args.decay_model, background=True).to_dict()
                path = out / "decay_fits.json"
                write_json(fits, path)
                outputs.append(path)
    trace_csv, trace_json = out / "trace.csv", out / "trace.json"
    write_table(trace_csv, columns)
    write_json(doc, trace_json)
    outputs = [trace_csv, trace_json] + outputs
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _manifest(args, [args.stream], outputs, params, None, started, out / "trace.manifest.json")


def _parse_grid(text):
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"--grid: expected N or NxM, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 2:
        raise UsageError(f"--grid: expected N or NxM with N, M >= 2, got {text!r}")
    return tuple(vals)


def _parse_bandwidth(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError("--bandwidth: expected H_INTENSITY,H_LIFETIME (use 'auto' for Silverman)")
    out = []
    for p in parts:
        p = p.strip()
        if p.lower() == "auto":
            out.append(None)
            continue
        try:
            out.append(float(p))
        except ValueError:
            raise UsageError(f"--bandwidth: {p!r} is not a number") from None
    return tuple(out)


def cmd_flid(args, started):
    grid = _parse_grid(args.grid)
    bandwidth = _parse_bandwidth(args.bandwidth)
    stream = _read(args.stream)
    out = _out_dir(args)
    fmap = build_flid(
        bin_intensity(stream, args.bin_time), mean_arrival_trace(stream, args.bin_time, args.statistic), grid, bandwidth
    )
    paths = [out / "flid.csv", out / "flid.json", out / "flid.pgm", out / "flid.ppm"]
    write_matrix_csv(fmap.density, paths[0])
    modes = find_modes(fmap)
    write_json(
        {
            "grid": {"intensity_cells": grid[0], "lifetime_cells": grid[1]},
            "matrix_layout": "rows follow the lifetime axis, columns the intensity axis",
            "intensity_edges": fmap.intensity_edges,
            "lifetime_edges_s": fmap.lifetime_edges,
            "bandwidths": {"intensity": fmap.bandwidths[0], "lifetime_s": fmap.bandwidths[1]},
            "sample_count": fmap.sample_count,
            "normalization": fmap.total_mass,
            "second_moment_spread": second_moment_spread(fmap),
            "modes": [m.__dict__ for m in modes],
        },
        paths[1],
    )
    write_pgm(fmap.density, paths[2])
    write_ppm(fmap.density, paths[3])
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _manifest(args, [args.stream], paths, params, None, started, out / "flid.manifest.json")


def cmd_fit(args, started):
    out = _out_dir(args)
    if args.saturation:
        table = read_table(args.saturation, names=["power", "intensity"])
        cols = list(table)
        if len(cols) != 2:
            raise ParseError(1, "saturation file needs two columns: power, intensity")
        points = np.column_stack([table[cols[0]], table[cols[1]]])
        result = fit_saturation(points).to_dict()
        path, src = out / "fit_saturation.json", args.saturation
    else:
        table = read_table(args.spectrum, names=["wavelength_nm", "intensity"])
        cols = list(table)
        if len(cols) != 2:
            raise ParseError(1, "spectrum file needs two columns: wavelength_nm, intensity")
        spec = fit_spectrum(table[cols[0]], table[cols[1]])
        result = {
            "cew_nm": spec.cew,
            "fwhm_nm": spec.fwhm,
            "amplitude": spec.amplitude,
            "baseline": spec.baseline,
            "fit": spec.fit.to_dict(),
        }
        path, src = out / "fit_spectrum.json", args.spectrum
    write_json(result, path)
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _manifest(args, [src], [path], params, None, started, path.with_name(path.stem + ".manifest.json"))


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photonstat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"photonstat {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap (default: $PHOTONSTAT_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a blinking emitter into a PSTR file")
    s.add_argument("config", help="JSON or INI simulation config")
    s.add_argument("output", help="output .pstr path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("g2", help="pulsed or long-delay A x B correlation")
    s.add_argument("stream")
    s.add_argument("--mode", choices=("pulsed", "long"), default="pulsed")
    s.add_argument("--bin-width", type=float, default=1e-9, help="pulsed bin width in s")
    s.add_argument("--span", type=int, default=10, help="pulsed range in sync periods")
    s.add_argument("--peak-halfwidth", type=float, default=None, help="pulsed peak window in s")
    s.add_argument("--per-bin", action="store_true", help="apply the background correction per bin")
    s.add_argument("--tau-min", type=float, default=DEFAULT_TAU_RANGE[0])
    s.add_argument("--tau-max", type=float, default=DEFAULT_TAU_RANGE[1])
    s.add_argument("--bins-per-decade", type=int, default=10)
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_g2)

    s = sub.add_parser("trace", help="intensity/lifetime traces, segmentation and decays")
    s.add_argument("stream")
    s.add_argument("--bin-time", type=float, default=DEFAULT_BIN_TIME)
    s.add_argument("--statistic", choices=("mean", "median"), default="mean")
    s.add_argument("--segment", action="store_true")
    s.add_argument("--decays", action="store_true", help="fit state-resolved decays (implies --segment)")
    s.add_argument("--decay-model", choices=("mono", "bi"), default="mono")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("flid", help="fluorescence lifetime-intensity distribution map")
    s.add_argument("stream")
    s.add_argument("--grid", default="256", help="N or NxM (intensity x lifetime cells)")
    s.add_argument("--bandwidth", default=None, help="H_INTENSITY,H_LIFETIME_S; 'auto' for Silverman")
    s.add_argument("--bin-time", type=float, default=DEFAULT_BIN_TIME)
    s.add_argument("--statistic", choices=("mean", "median"), default="mean")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_flid)

    s = sub.add_parser("fit", help="saturation or spectrum fit from a CSV file")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--saturation", metavar="POINTS_CSV")
    g.add_argument("--spectrum", metavar="SPECTRUM_CSV")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_fit)
    return p


def _thread_cap(value):
    if value is not None:
        return value
    env = os.environ.get("PHOTONSTAT_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PHOTONSTAT_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        threads = _thread_cap(args.threads)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
        _kernels.set_threads(threads)
        args.func(args, started)
    except (UsageError, InvalidModel, InsufficientPoints) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoFailure, StreamFormatError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AnalysisError as exc:
        print(f"analysis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
