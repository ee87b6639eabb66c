"""Configuration parsing, loop files, run manifests and plot-ready CSV output."""
import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .loops import RootedLoop

SCHEMA_MAJOR = 1
SCHEMA_VERSION = f"{SCHEMA_MAJOR}.0"
LOOP_SCHEMA = "loopsoup.loops"
PERCENTILE_HEADER = ("schema_version", "d", "variant", "N", "percentile", "value")
ASEQ_HEADER = ("n", "a_n", "offset", "identity_residual")


class LoopFileError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path, self.line = path, line


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

# name -> (type, validator or None, message)
_FIELDS = {
    "d": (int, lambda v: v >= 1, "d must be >= 1"),
    "variant": (str, lambda v: v in ("discrete", "continuous"), "variant must be discrete or continuous"),
    "N": (int, lambda v: v >= 1, "N must be >= 1"),
    "scale_grid": (list, lambda v: len(v) > 0 and all(int(x) == x and x >= 1 for x in v),
                   "every N in the scale grid must be an integer >= 1"),
    "r": (float, lambda v: v >= 1, "r must be >= 1"),
    "lam": (float, lambda v: v > 0, "lambda must be > 0"),
    "lambdas": (list, lambda v: len(v) > 0 and all(x > 0 for x in v) and all(
        b > a for a, b in zip(v, v[1:])), "lambda levels must be positive and strictly increasing"),
    "theta": (float, lambda v: 0 < v < 2, "theta must lie in the open interval (0, 2)"),
    "a": (float, lambda v: v > 0, "a must be > 0"),
    "reps": (int, lambda v: v >= 1, "reps must be >= 1"),
    "seed": (int, lambda v: v >= 0, "seed must be >= 0"),
    "threads": (int, lambda v: v >= 1, "threads must be >= 1"),
    "n_max": (int, lambda v: v >= 1, "n_max must be >= 1"),
    "threshold_c": (float, lambda v: v > 0, "threshold_c must be > 0"),
}


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def parse_config(path=None, flags=None, defaults=None):
    """Merge a JSON config file with command-line values and validate the result.

    ``flags`` holds only values given explicitly; they win over the file, and
    each override is recorded in the returned warnings.  ``defaults`` fill any
    key still missing.  A missing seed is derived from the digest of the
    merged config.  Returns ``(config, warnings)``.
    """
    cfg, warnings = {}, []
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for key, val in (flags or {}).items():
        if val is None:
            continue
        if key in cfg and cfg[key] != val:
            warnings.append(f"flag value {key}={val!r} overrides config file value {cfg[key]!r}")
        cfg[key] = val
    for key, val in (defaults or {}).items():
        if cfg.get(key) is None and val is not None:
            cfg[key] = val
    for key, val in list(cfg.items()):
        if key not in _FIELDS:
            continue
        kind, ok, msg = _FIELDS[key]
        try:
            conv = [float(x) for x in val] if kind is list else kind(val)
            if kind is int and float(val) != conv:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {val!r} as {kind.__name__}") from None
        if not ok(conv):
            raise ConfigError(f"{msg} (got {val!r})")
        cfg[key] = conv
    if cfg.get("seed") is None:
        cfg["seed"] = int(config_digest(cfg)[:15], 16)
        cfg["seed_derived"] = True
        warnings.append(f"no seed given; derived seed {cfg['seed']} from the config digest")
    return cfg, warnings


# --------------------------------------------------------------------------
# loop files
# --------------------------------------------------------------------------

def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def loop_to_record(loop):
    rec = {"flavor": loop.flavor, "d": int(loop.d), "root": loop.root.tolist(),
           "t_len": float(loop.t_len), "levels": loop.levels}
    if loop.flavor == "rw_discrete":
        rec["vertices"] = loop.points.astype(int).tolist()
    else:
        rec["times"] = [float(t) for t in loop.times]
        key = "vertices" if loop.flavor == "rw_continuous" else "points"
        rec[key] = loop.points.tolist()
    return rec


def record_to_loop(rec):
    flavor, d = rec["flavor"], int(rec["d"])
    if flavor == "rw_discrete":
        pts = np.asarray(rec["vertices"], dtype=np.int64).reshape(-1, d)
        times = np.arange(len(pts), dtype=float)
    elif flavor == "rw_continuous":
        pts = np.asarray(rec["vertices"], dtype=np.int64).reshape(-1, d)
        times = np.asarray(rec["times"], dtype=float)
    else:
        pts = np.asarray(rec["points"], dtype=float).reshape(-1, d)
        times = np.asarray(rec["times"], dtype=float)
    return RootedLoop(flavor, d, float(rec["t_len"]), times, pts, rec.get("levels"))


def write_loops(loops, path):
    """Write a header line plus one JSON record per loop; returns the file's sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": LOOP_SCHEMA, "version": SCHEMA_VERSION}) + "\n")
        for loop in loops:
            fh.write(json.dumps(loop_to_record(loop), separators=(",", ":")) + "\n")
    return file_digest(path)


def _check_header(path, header):
    if header.get("schema") != LOOP_SCHEMA:
        raise LoopFileError(path, 1, "not a loop file")
    major = int(str(header.get("version", "0")).split(".")[0])
    if major != SCHEMA_MAJOR:
        raise LoopFileError(path, 1, f"unsupported schema version {header.get('version')}")


def read_loops(path):
    loops = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoopFileError(path, lineno, f"malformed JSON at column {exc.colno}") from None
            if lineno == 1:
                _check_header(path, rec)
                continue
            try:
                loops.append(record_to_loop(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise LoopFileError(path, lineno, f"bad loop record ({exc})") from None
    if not loops and Path(path).stat().st_size == 0:
        raise LoopFileError(path, 1, "missing header line")
    return loops


# --------------------------------------------------------------------------
# manifests and tables
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    seed: int
    files: dict = field(default_factory=dict)
    wall_time: float = 0.0
    warnings: list = field(default_factory=list)
    tool_version: str = __version__
    schema_version: str = SCHEMA_VERSION

    def add_file(self, path, digest=None):
        self.files[Path(path).name] = digest or file_digest(path)

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


def write_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return file_digest(path)


def write_aseq_csv(seq, path):
    ns = np.arange(1, seq.n_max + 1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ASEQ_HEADER)
        for n, a, res in zip(ns, seq.a[:-1], seq.identity_residual):
            w.writerow([int(n), repr(float(a)), repr(float(a - 2.0 * n / seq.d)), repr(float(res))])
    return file_digest(path)


def emit_plot_data(reports, path, seq=None):
    """Tidy CSV of sup-distance percentiles (one row per report and percentile).

    With ``seq`` an a_n residual table is written next to it as ``aseq.csv``.
    Returns the list of files written.
    """
    if not reports:
        raise ValueError("need at least one report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PERCENTILE_HEADER)
        for rep in reports:
            cfg = rep["config"] if isinstance(rep, dict) else rep.config
            pct = rep["sup_dist_percentiles"] if isinstance(rep, dict) else rep.sup_dist_percentiles
            for p, v in sorted(pct.items(), key=lambda kv: float(kv[0])):
                w.writerow([SCHEMA_VERSION, cfg["d"], cfg["variant"], cfg["N"], int(float(p)),
                            repr(float(v)) if v is not None else "nan"])
    written = [path]
    if seq is not None:
        extra = path.with_name("aseq.csv")
        write_aseq_csv(seq, extra)
        written.append(extra)
    return written
