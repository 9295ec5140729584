"""Command-line front end.

Every subcommand is a pure function of (config, input files, seed) and writes
its artifacts atomically under ``--out``. A tab-separated summary goes to
stdout. Exit codes: 0 ok, 2 validation, 3 numerical failure, 4 I/O.
"""

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import formats, pipeline as pl
from .correlation import cross_correlate, g2_from_streams
from .errors import FormatError, NfcoupleError, ValidationError
from .inference import fit_g2

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _emit(rows, stream=None):
    stream = stream or sys.stdout
    for row in rows:
        stream.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _out(cfg):
    return Path(cfg["output_dir"])


def _figures(args):
    return not args.no_figures


# --- subcommands ----------------------------------------------------------------------


def cmd_modes(cfg, args):
    mode, summary, profile = pl.mode_summary(cfg)
    out = _out(cfg)
    formats.write_json(out / "modes.json", {"config": cfg, "mode": summary})
    formats.write_csv_table(out / "mode_profile.csv", pl.PROFILE_HEADER,
                            [tuple(float(x) for x in row) for row in profile])
    if _figures(args):
        from . import plotting
        plotting.mode_profile(profile, cfg["fiber"]["radius_nm"], out / "mode_profile.png")
    _emit([("n_eff", summary["n_eff"]), ("n_group", summary["n_group"]),
           ("v_number", summary["v_number"]), ("single_mode", summary["single_mode"])])


def cmd_couple(cfg, args):
    out = _out(cfg)
    spectrum = None
    if cfg["dipole"]["spectrum"] is not None:
        spectrum = formats.read_spectrum(cfg["dipole"]["spectrum"])
    report, sweep, dsweep = pl.coupling_summary(cfg)
    if spectrum is not None:
        report["spectral_average"] = pl.spectral_summary(cfg, spectrum)
    formats.write_json(out / "coupling.json", {"config": cfg, "coupling": report})
    formats.write_csv_table(out / "orientation_sweep.csv", pl.SWEEP_HEADER, sweep)
    formats.write_csv_table(out / "distance_sweep.csv", pl.DISTANCE_HEADER, dsweep)
    if _figures(args):
        from . import plotting
        plotting.orientation_sweep(sweep, dsweep, out / "orientation_sweep.png")
    rows = [(f"beta_{k}", v["beta"]) for k, v in report["orientations"].items()]
    if "nv" in report:
        rows += [("beta_nv_low", report["nv"]["beta_low"]),
                 ("beta_nv_high", report["nv"]["beta_high"])]
    for k, v in report.get("spectral_average", {}).items():
        rows.append((f"beta_spectral_{k}", v))
    _emit(rows)


def _power_indices(cfg, args):
    n = len(cfg["powers_mw"])
    idx = args.power_index if args.power_index else range(n)
    for i in idx:
        if not 0 <= i < n:
            raise ValidationError(f"power index {i} outside 0..{n - 1}")
    return list(idx)


def tag_filename(cfg, index, ext):
    return f"tags_p{index:02d}_{cfg['powers_mw'][index]:g}mW.{ext}"


def cmd_simulate(cfg, args):
    model = pl.build_model(cfg)
    out = _out(cfg) / "tags"
    rows = []
    for i in _power_indices(cfg, args):
        streams = pl.simulate_power(cfg, model, i)
        path = out / tag_filename(cfg, i, args.format)
        if args.format == "ttg1":
            formats.write_ttg1(path, streams, n_channels=len(model.channels))
        else:
            formats.write_atomic(path, formats.encode_tag_csv(streams))
        rows.append((path.name, cfg["powers_mw"][i]) + tuple(len(s) for s in streams))
    _emit(rows)


def cmd_correlate(cfg, args):
    kw = pl.correlation_kwargs(cfg)
    out = _out(cfg) / "histograms"
    pair = tuple(args.pair) if args.pair else pl.pair_channels(cfg, "confocal")
    rows = []
    for path in args.inputs:
        streams = formats.read_tags(path, duration=cfg["emitter"]["duration_s"],
                                    resolution_ps=cfg["emitter"]["resolution_ps"])
        for ch in pair:
            if not 0 <= ch < len(streams):
                raise ValidationError(f"{path}: no channel {ch} (file has {len(streams)})")
        a, b = streams[pair[0]], streams[pair[1]]
        if len(a) == 0 or len(b) == 0:
            # an empty channel gives a flagged all-zero histogram, nothing to normalize
            hist = cross_correlate(a, b, kw["bin_width"], kw["tau_max"], args.threads)
        else:
            hist = g2_from_streams(a, b, threads=args.threads, **kw)
        dest = out / f"{Path(path).stem}_ch{pair[0]}-{pair[1]}.csv"
        formats.write_histogram(dest, hist)
        rows.append((dest.name, hist.n_pairs, "empty" if hist.empty else "ok"))
    _emit(rows)


def cmd_fit(cfg, args):
    out = _out(cfg) / "fits"
    rows = []
    for path in args.inputs:
        hist = formats.read_histogram(path)
        if hist.empty or hist.n_pairs == 0:
            raise ValidationError(f"{path}: histogram is empty, nothing to fit")
        fit = fit_g2(hist, **pl.fit_kwargs(cfg))
        formats.write_json(out / f"{Path(path).stem}.json",
                           {"input": Path(path).name, "fit": fit.to_report()})
        s = fit.sigmas
        rows.append((Path(path).name, fit.p_f, s["p_f"], fit.tau1 * 1e9, s["tau1"] * 1e9,
                     fit.tau2 * 1e9, s["tau2"] * 1e9, fit.c, s["c"], fit.g2_zero))
    _emit([("file", "p_f", "p_f_sigma", "tau1_ns", "tau1_sigma_ns", "tau2_ns",
            "tau2_sigma_ns", "c", "c_sigma", "g2_zero")] + rows)


def _fitted_inputs(path):
    """(c_free, c_nf, tau_tot) value/sigma pairs from a pipeline report."""
    try:
        rep = json.loads(Path(path).read_text())
        conf, fib = rep["saturation"]["confocal"], rep["saturation"]["fiber"]
        lt = rep["lifetime"]
        return ((conf["params"]["k"], conf["sigmas"]["k"]),
                (fib["params"]["k"], fib["sigmas"]["k"]),
                (lt["params"]["tau_tot"], lt["sigmas"]["tau_tot"]))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path} is not a complete pipeline report ({exc})") from exc


def cmd_analyze(cfg, args):
    fitted = _fitted_inputs(args.fits) if args.fits else (None, None, None)
    inputs = pl.efficiency_inputs(cfg, *fitted)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = pl.efficiency_report(cfg, inputs)
    formats.write_json(_out(cfg) / "efficiency.json",
                       {"config": cfg, "source": "fits" if args.fits else "config",
                        "efficiency": rep.to_dict()})
    _emit_efficiency(rep)


def _emit_efficiency(rep):
    rows = []
    for k in ("gamma_nf", "gamma_free_low", "gamma_free_high", "beta_low", "beta_high",
              "qe_low", "qe_high"):
        rows.append((k, rep.values[k], rep.sigmas[k]))
    rows += [(f"flag_{k}", v) for k, v in sorted(rep.flags.items())]
    _emit(rows)


def cmd_pipeline(cfg, args):
    out = _out(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = pl.run_pipeline(cfg, threads=args.threads)
    for r in result.results:
        if r.error is None:
            for name in pl.PAIRS:
                formats.write_histogram(
                    out / "histograms" / f"p{r.index:02d}_{r.power:g}mW_{name}.csv",
                    r.histograms[name])
    formats.write_csv_table(out / "replication_table.csv", pl.TABLE_HEADER,
                            pl.replication_table(cfg, result))
    report = pl.pipeline_report(cfg, result)
    formats.write_json(out / "report.json", report)
    if result.efficiency is not None:
        formats.write_json(out / "efficiency.json",
                           {"config": cfg, "source": "pipeline",
                            "efficiency": result.efficiency.to_dict()})
    if _figures(args):
        from . import plotting
        figs = out / "figures"
        for name in pl.PAIRS:
            plotting.g2_panels(result.results, name, figs / f"g2_{name}.png")
        if result.confocal is not None:
            rates = {n: pl.pair_rates(cfg, result.model, result.results, n) for n in pl.PAIRS}
            plotting.saturation(result, rates, figs / "saturation.png")
        if result.lifetime is not None:
            plotting.lifetime(result, figs / "lifetime.png")

    rows = []
    if result.confocal is not None:
        rows += [("c_free_per_s", result.confocal.k, result.confocal.sigmas["k"]),
                 ("p_sat_mw", result.confocal.p_sat, result.confocal.sigmas["p_sat"])]
    if result.fiber is not None:
        rows += [("c_nf_per_s", result.fiber.k, result.fiber.sigmas["k"]),
                 ("m_per_s_per_mw", result.fiber.m, result.fiber.sigmas["m"])]
    if result.lifetime is not None:
        rows.append(("tau_tot_ns", result.lifetime.tau_tot * 1e9, result.lifetime.sigma * 1e9))
    _emit(rows)
    if result.efficiency is not None:
        _emit_efficiency(result.efficiency)
    if result.errors:
        for e in result.errors:
            print(f"error: {e}", file=sys.stderr)
        raise pl.PipelineIncomplete(
            f"{len(result.errors)} stage(s) failed; partial results written to {out}")


COMMANDS = {
    "modes": (cmd_modes, "solve the fundamental fiber mode"),
    "couple": (cmd_couple, "dipole coupling efficiencies and sweeps"),
    "simulate": (cmd_simulate, "simulate time tags for the configured powers"),
    "correlate": (cmd_correlate, "correlate a detector pair into a g2 histogram"),
    "fit": (cmd_fit, "fit the three-level g2 model to histograms"),
    "analyze": (cmd_analyze, "rate chain: beta and quantum-efficiency bounds"),
    "pipeline": (cmd_pipeline, "full closed-loop analysis over all powers"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root random seed (overrides config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="K=V", help="override a config leaf by dotted path")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker count for correlation and per-power tasks")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    parser = argparse.ArgumentParser(prog="nfcouple", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, (_, text) in COMMANDS.items()}
    parsers["simulate"].add_argument("--power-index", type=int, action="append",
                                     help="simulate only this power index (repeatable)")
    parsers["simulate"].add_argument("--format", choices=("ttg1", "csv"), default="ttg1")
    parsers["correlate"].add_argument("inputs", nargs="+", help="TTG1 or CSV time-tag files")
    parsers["correlate"].add_argument("--pair", type=int, nargs=2, metavar=("A", "B"),
                                      help="channels to correlate (default: confocal pair)")
    parsers["fit"].add_argument("inputs", nargs="+", help="histogram CSV files")
    parsers["analyze"].add_argument("--fits", metavar="REPORT",
                                    help="pipeline report supplying fitted rates and lifetime")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        cfg = config_mod.load(args.config, args.overrides, args.seed, args.out)
        COMMANDS[args.command][0](cfg, args)
    except NfcoupleError as exc:
        print(f"nfcouple {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"nfcouple {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"nfcouple {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc, np.linalg.LinAlgError) else EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
