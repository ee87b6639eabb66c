"""Command-line interface: ``python -m loopsoup <subcommand> ...``."""
import argparse
import csv
import logging
import sys
import time
from pathlib import Path


from .bridges import brownian_levels, sample_brownian_bridge, sample_continuous_bridge, sample_discrete_bridge
from .coupling import couple_bridges
from .errors import ConfigError, MemoryGuardError, PrecisionError
from .experiment import ExperimentConfig, calibrate_for, fit_sup_scaling, run_experiment
from .io import (RunManifest, emit_plot_data, parse_config, write_aseq_csv, write_json,
                 write_loops, file_digest)
from .masses import asymptotic_residual, build_mass_table
from .rng import RandomStream
from .sequences import build_a_sequence
from .soup import SoupWindow, build_coupled_brownian_soup, sample_poisson_field

log = logging.getLogger("loopsoup")

EXIT_OK, EXIT_CONFIG, EXIT_PRECISION, EXIT_MEMORY = 0, 2, 3, 4


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="JSON file; explicit flags override its values")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="loopsoup", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("masses", parents=[common], help="cell masses and asymptotic residuals")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--variant")
    p.add_argument("--n-max", dest="n_max", type=int)

    p = sub.add_parser("aseq", parents=[common], help="tabulate the a_n sequence")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--variant")
    p.add_argument("--n-max", dest="n_max", type=int)

    p = sub.add_parser("sample-bridge", parents=[common], help="sample bridges as JSON lines")
    p.add_argument("--flavor", choices=("brownian", "rw_discrete", "rw_continuous"))
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--tlen", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--levels", type=int)

    p = sub.add_parser("couple-bridge", parents=[common], help="coupled bridge discrepancies as CSV")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--variant")
    p.add_argument("--n", dest="n", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("sample-soup", parents=[common], help="coupled soups per lambda level")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--variant")
    p.add_argument("--lambda", dest="lambdas", type=_floats)
    p.add_argument("--radius", dest="r", type=float)
    p.add_argument("--scale", dest="N", type=int)
    p.add_argument("--n-max", dest="n_max", type=int)

    p = sub.add_parser("verify", parents=[common], help="run the coupling experiment over an N grid")
    p.add_argument("--dim", dest="d", type=int)
    p.add_argument("--variant")
    p.add_argument("--scale-grid", dest="scale_grid", type=_ints)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--radius", dest="r", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--calibrate", type=int, default=None, metavar="SAMPLES",
                   help="calibrate the event-A constant with this many coupled bridges")

    p = sub.add_parser("plot-data", parents=[common], help="tidy CSV from verify reports")
    p.add_argument("reports", nargs="+")
    return parser


DEFAULTS = {
    "masses": {"d": 2, "variant": "discrete", "n_max": 1000},
    "aseq": {"d": 2, "variant": "continuous", "n_max": 10000},
    "sample-bridge": {"flavor": "brownian", "d": 2, "tlen": 1.0, "count": 1, "levels": None},
    "couple-bridge": {"d": 1, "variant": "discrete", "n": 64, "reps": 100},
    "sample-soup": {"d": 2, "variant": "continuous", "lambdas": [1.0], "r": 1.0, "N": 8, "n_max": 4096},
    "verify": {"d": 2, "variant": "continuous", "scale_grid": [8, 16, 32, 64], "lam": 1.0, "r": 1.0,
               "theta": 1.0, "a": 2.0, "reps": 10},
    "plot-data": {},
}
_NOT_CONFIG = {"command", "config", "out", "reports", "calibrate"}


def _resolve(args):
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    cfg, warnings = parse_config(args.config, flags, {**DEFAULTS[args.command], "threads": 1})
    for key, val in DEFAULTS[args.command].items():
        cfg.setdefault(key, val)
    for w in warnings:
        log.warning(w)
    return cfg, warnings


def _out(args, default):
    path = Path(args.out or default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_masses(args, cfg):
    table = build_mass_table(cfg["d"], cfg["variant"], cfg["n_max"])
    res = asymptotic_residual(cfg["d"], cfg["variant"], table.n)[:, 1]
    path = _out(args, "masses.csv")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("n", "mass", "abs_err", "asymptotic_residual"))
        for n, m, e, r in zip(table.n, table.entries, table.abs_err, res):
            w.writerow([int(n), repr(float(m)), repr(float(e)), repr(float(r))])
    return [path]


def cmd_aseq(args, cfg):
    seq = build_a_sequence(cfg["d"], cfg["variant"], cfg["n_max"])
    path = _out(args, "aseq.csv")
    write_aseq_csv(seq, path)
    log.info("tail constant sup|a_n - 2n/d| = %.6f", seq.tail_constant)
    return [path]


def cmd_sample_bridge(args, cfg):
    stream = RandomStream(cfg["seed"]).child("sample-bridge")
    d, t = cfg["d"], cfg["tlen"]
    loops = []
    for i in range(cfg["count"]):
        key = stream.child(i)
        if cfg["flavor"] == "brownian":
            levels = cfg["levels"] or brownian_levels(max(1, int(t / 2)))
            loops.append(sample_brownian_bridge(d, t, levels, key))
        elif cfg["flavor"] == "rw_discrete":
            if t != int(t) or int(t) % 2:
                raise ConfigError("rw_discrete needs an even integer --tlen (= 2n)")
            loops.append(sample_discrete_bridge(d, int(t) // 2, key))
        else:
            loops.append(sample_continuous_bridge(d, t, key))
    path = _out(args, "bridges.jsonl")
    write_loops(loops, path)
    return [path]


def cmd_couple_bridge(args, cfg):
    stream = RandomStream(cfg["seed"]).child("couple-bridge")
    n = cfg["n"]
    arg = n if cfg["variant"] == "discrete" else 2.0 * n
    path = _out(args, "couplings.csv")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rep", "sup_dist", "t_walk"))
        for rep in range(cfg["reps"]):
            pair = couple_bridges(cfg["d"], cfg["variant"], arg, stream.child(rep))
            w.writerow([rep, repr(pair.sup_dist), repr(pair.walk.t_len)])
    return [path]


def cmd_sample_soup(args, cfg):
    window = SoupWindow(cfg["d"], cfg["variant"], cfg["N"], cfg["r"], 1, cfg["n_max"],
                        tuple(cfg["lambdas"]))
    stream = RandomStream(cfg["seed"]).child("sample-soup")
    seq = build_a_sequence(window.d, window.variant, min(window.n_max + 1, 20000))
    fld = sample_poisson_field(window, stream)
    soup = build_coupled_brownian_soup(fld, window, seq, stream)
    out = Path(args.out or "soup")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for lam in window.lambdas:
        part = soup.restrict(lam)
        for kind, loops in (("rw", part.rw_soup), ("brownian", part.br_soup)):
            path = out / f"{kind}_lambda_{lam:g}.jsonl"
            write_loops(loops, path)
            written.append(path)
    return written


def cmd_verify(args, cfg):
    out = Path(args.out or "verify")
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for N in cfg["scale_grid"]:
        ecfg = ExperimentConfig(cfg["d"], cfg["variant"], int(N), cfg["r"], cfg["lam"], cfg["theta"],
                                cfg["a"], cfg["reps"], cfg["seed"], cfg.get("threshold_c"),
                                threads=cfg["threads"])
        c = ecfg.threshold_c
        if c is None and args.calibrate:
            c = calibrate_for(ecfg, args.calibrate).c
        rep = run_experiment(ecfg, c)
        log.info("N=%d pairs=%d p99=%.4g gaps ok=%s bijection=%s", N, rep.correspondence_size,
                 rep.sup_dist_percentiles[99], rep.time_gap_violations == 0, rep.bijection_ok)
        reports.append(rep)
    summary = {"reports": [r.to_dict() for r in reports],
               "sup_scaling": fit_sup_scaling(reports) if len(reports) > 1 else None}
    written = [out / "report.json"]
    write_json(summary, written[0])
    written += emit_plot_data(reports, out / "percentiles.csv")
    failed = [r for r in reports if r.time_gap_violations or not r.bijection_ok]
    if failed:
        log.error("time-gap or bijection check failed for %d grid points", len(failed))
    return written


def cmd_plot_data(args, cfg):
    import json

    reports = []
    for path in args.reports:
        data = json.loads(Path(path).read_text())
        found = [r for r in data.get("reports", [data]) if "sup_dist_percentiles" in r]
        if not found:
            log.warning("skipping %s: no verify reports", path)
        reports += found
    if not reports:
        raise ConfigError("no verify reports among the given files")
    return emit_plot_data(reports, _out(args, "percentiles.csv"))


COMMANDS = {
    "masses": cmd_masses, "aseq": cmd_aseq, "sample-bridge": cmd_sample_bridge,
    "couple-bridge": cmd_couple_bridge, "sample-soup": cmd_sample_soup, "verify": cmd_verify,
    "plot-data": cmd_plot_data,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg, warnings = _resolve(args)
        written = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except PrecisionError as exc:
        log.error("precision exhausted: %s", exc)
        return EXIT_PRECISION
    except MemoryGuardError as exc:
        log.error("memory guard: %s", exc)
        return EXIT_MEMORY
    manifest = RunManifest(config={k: v for k, v in cfg.items()}, seed=cfg["seed"], warnings=warnings,
                           wall_time=time.perf_counter() - start)
    for path in written:
        manifest.add_file(path, file_digest(path))
    target = Path(written[0]).parent if written else Path(".")
    manifest.write(target / f"manifest_{args.command}.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
