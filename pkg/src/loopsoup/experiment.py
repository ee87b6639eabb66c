"""The full lattice/continuum soup coupling pipeline and its failure statistics."""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .coupling import couple_bridges
from .errors import ConfigError, MemoryGuardError
from .masses import check_dim, check_variant, mass_model
from .rng import RandomStream
from .sequences import build_a_sequence, chi_cell, psi_site
from .soup import SoupWindow, build_coupled_brownian_soup, sample_poisson_field

PERCENTILES = (50, 90, 99, 100)
GAP_EPS = 1e-9
# a_n table size used by experiments; larger n go through the tail directly
SEQ_TABLE = 20000


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    variant: str
    N: int
    r: float = 1.0
    lam: float = 1.0
    theta: float = 1.0
    a: float = 2.0
    reps: int = 10
    seed: int = 0
    threshold_c: float | None = None
    loop_cap: float = 2.0e6
    threads: int = 1

    def __post_init__(self):
        try:
            check_dim(self.d)
            check_variant(self.variant)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be an integer >= 1, got {self.N}")
        if not 0 < self.theta < 2:
            raise ConfigError(f"theta must lie in the open interval (0, 2), got {self.theta}")
        if self.a <= 0:
            raise ConfigError(f"a must be > 0, got {self.a}")
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")

    @property
    def k(self):
        return 2.0 + 2.0 * self.a / self.d

    @property
    def eta(self):
        return (self.a + self.d) / self.theta

    def n_theorem(self):
        """Lattice loops of cell n are in the theorem's set iff n > this value."""
        return math.floor(self.d * self.N ** self.theta / 2.0)

    def n_range(self):
        """Simulated cells: from the first cell that can enter any of the studied sets up to n < N^k."""
        lo = max(1, min(self.n_theorem(), math.floor(self.N ** self.theta)))
        hi = max(lo, math.ceil(self.N ** self.k - 1e-9) - 1)
        return lo, hi

    def window(self):
        lo, hi = self.n_range()
        return SoupWindow(self.d, self.variant, int(self.N), self.r, lo, hi, (self.lam,))


@dataclass
class CouplingReport:
    config: dict
    correspondence_sizes: list
    time_gap_max: float
    time_gap_bound: float
    time_gap_violations: int
    sup_dist_percentiles: dict
    event_A_count: int
    large_n_count: int
    W: list
    Z: list
    failure_frequency: float
    bijection_ok: bool
    root_mismatches: int
    raw_time_mismatch: int
    threshold_c: float
    expected_W: float
    expected_Z: float
    large_n_probability: float
    tail_constant: float
    scaled_sups: np.ndarray = field(repr=False)

    @property
    def correspondence_size(self):
        return int(sum(self.correspondence_sizes))

    def to_dict(self):
        out = asdict(self)
        out["scaled_sups"] = [float(x) for x in self.scaled_sups]
        return out


@lru_cache(maxsize=16)
def experiment_sequence(d, variant, n_max=SEQ_TABLE):
    return build_a_sequence(d, variant, n_max)


def _event_A_threshold(cfg, c):
    base = 3.0 * cfg.k * c * math.log(cfg.N)
    if cfg.variant == "discrete" and cfg.d >= 3:
        base *= cfg.N ** (cfg.k / 4.0)
    return base


def _run_rep(cfg, rep, c):
    d, N = cfg.d, cfg.N
    seq = experiment_sequence(d, cfg.variant)
    window = cfg.window()
    stream = RandomStream(cfg.seed).child("rep", rep)
    fld = sample_poisson_field(window, stream)
    model = mass_model(d, cfg.variant)
    n_hi = cfg.n_range()[1]
    z_mean = cfg.lam * window.site_count() * float(model.tail(n_hi + 1))
    Z = int(stream.child("Z").generator().poisson(z_mean))
    soup = build_coupled_brownian_soup(fld, window, seq, stream, keep_paths=False)

    inside = np.sum(soup.site.astype(float) ** 2, axis=1) < (cfg.r * N) ** 2
    cut = N ** (cfg.theta - 2.0)
    # lattice set, classified by the cell-rounded time 2n/(d N^2)
    rw_set = inside & (2.0 * soup.n / (d * N * N) > cut)
    rw_raw = inside & (soup.t_walk / (d * N * N) > cut)
    br_roots = (soup.site + soup.jitter) / N
    br_sites = psi_site(br_roots, N)
    br_inside = np.sum(br_sites.astype(float) ** 2, axis=1) < (cfg.r * N) ** 2
    chi = np.array([chi_cell(t / (N * N), N, seq) or 0 for t in soup.t_brown], dtype=float)
    br_set = br_inside & (2.0 * chi / (d * N * N) > cut)

    gaps = np.abs(soup.t_brown / (N * N) - soup.t_walk / (d * N * N))
    bound = (seq.tail_constant + 2.0 / d + GAP_EPS) / (N * N)
    scaled = soup.loop_sup[rw_set] / N
    target_range = inside & (soup.n > N ** cfg.theta) & (soup.n < N ** cfg.k)
    event_A = int(np.sum(soup.loop_sup[target_range] >= _event_A_threshold(cfg, c))) if c else 0
    return {
        "size_rw": int(rw_set.sum()),
        "size_br": int(br_set.sum()),
        "bijection": bool(np.array_equal(rw_set, br_set)),
        "root_mismatch": int(np.sum(np.any(br_sites != soup.site, axis=1))),
        "raw_mismatch": int(np.sum(rw_set != rw_raw)),
        "gap_max": float(gaps.max()) if len(gaps) else 0.0,
        "gap_violations": int(np.sum(gaps > bound)),
        "gap_bound": bound,
        "scaled": scaled,
        "event_A": event_A,
        "W": int(np.sum(target_range)),
        "Z": Z,
        "z_mean": z_mean,
        "tail_constant": seq.tail_constant,
    }


def expected_loop_count(cfg):
    model = mass_model(cfg.d, cfg.variant)
    lo, hi = cfg.n_range()
    return cfg.lam * cfg.window().site_count() * float(model.tail(lo) - model.tail(hi + 1))


def run_experiment(cfg, threshold_c=None):
    """Run ``cfg.reps`` independent replications and reduce them to a :class:`CouplingReport`."""
    expected = expected_loop_count(cfg)
    if expected > cfg.loop_cap:
        raise MemoryGuardError(
            f"expected {expected:.3g} loops per replication exceeds the cap {cfg.loop_cap:.3g}")
    c = threshold_c if threshold_c is not None else cfg.threshold_c
    if cfg.threads > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            reps = list(pool.map(_run_rep, [cfg] * cfg.reps, range(cfg.reps), [c] * cfg.reps))
    else:
        reps = [_run_rep(cfg, i, c) for i in range(cfg.reps)]

    scaled = np.concatenate([r["scaled"] for r in reps]) if reps else np.empty(0)
    pct = {p: (float(np.percentile(scaled, p)) if scaled.size else math.nan) for p in PERCENTILES}
    model = mass_model(cfg.d, cfg.variant)
    lo, hi = cfg.n_range()
    sites = cfg.window().site_count()
    n_target = math.floor(cfg.N ** cfg.theta) + 1
    expected_W = cfg.lam * sites * float(model.tail(max(n_target, lo)) - model.tail(hi + 1))
    z_mean = reps[0]["z_mean"]
    failures = [(r["event_A"] > 0) or (r["Z"] > 0) for r in reps]
    return CouplingReport(
        config=asdict(cfg),
        correspondence_sizes=[r["size_rw"] for r in reps],
        time_gap_max=max(r["gap_max"] for r in reps),
        time_gap_bound=reps[0]["gap_bound"],
        time_gap_violations=sum(r["gap_violations"] for r in reps),
        sup_dist_percentiles=pct,
        event_A_count=sum(r["event_A"] for r in reps),
        large_n_count=sum(r["Z"] for r in reps),
        W=[r["W"] for r in reps],
        Z=[r["Z"] for r in reps],
        failure_frequency=float(np.mean(failures)),
        bijection_ok=all(r["bijection"] and r["size_rw"] == r["size_br"] for r in reps),
        root_mismatches=sum(r["root_mismatch"] for r in reps),
        raw_time_mismatch=sum(r["raw_mismatch"] for r in reps),
        threshold_c=math.nan if c is None else float(c),
        expected_W=expected_W,
        expected_Z=z_mean,
        large_n_probability=-math.expm1(-z_mean),
        tail_constant=reps[0]["tail_constant"],
        scaled_sups=scaled,
    )


# --------------------------------------------------------------------------
# threshold calibration and failure classification
# --------------------------------------------------------------------------

@dataclass
class Calibration:
    c: float
    quantile: float
    prob: float
    n: int
    tail_rate: float
    samples: int


def calibrate_threshold(d, variant, n, prob, samples=2000, seed=0, tail_fraction=0.1):
    """Fit c with P(pair sup > c * scale(n)) ~ prob for coupled bridges at size n.

    scale(n) = log n (n^{1/4} log n for discrete d >= 3).  The far quantile is
    extrapolated from an exponential fit to the top ``tail_fraction`` of the
    sample (maximum likelihood: the excesses have mean 1/rate).
    """
    if n < 2:
        raise ValueError("calibration needs n >= 2")
    stream = RandomStream(seed).child("calibrate", d, variant, n)
    arg = int(n) if variant == "discrete" else 2.0 * n
    sups = np.array([couple_bridges(d, variant, arg, stream.child(i)).sup_dist for i in range(samples)])
    u0 = np.quantile(sups, 1.0 - tail_fraction)
    excess = sups[sups > u0] - u0
    rate = 1.0 / max(excess.mean(), 1e-12)
    if prob >= tail_fraction:
        q = float(np.quantile(sups, 1.0 - prob))
    else:
        q = float(u0 + math.log(tail_fraction / prob) / rate)
    scale = math.log(n) * (n ** 0.25 if (variant == "discrete" and d >= 3) else 1.0)
    return Calibration(q / scale, q, prob, int(n), rate, samples)


def calibrate_for(cfg, samples=2000):
    """c(eta, d) for a config: the 1 - N^{-a-d} quantile at n = N^theta."""
    n = max(2, int(round(cfg.N ** cfg.theta)))
    return calibrate_threshold(cfg.d, cfg.variant, n, cfg.N ** (-cfg.a - cfg.d), samples, cfg.seed)


def classify_failures(soup, cfg, threshold_c=math.inf):
    """Indices of pairs in event A and of arrivals with n >= N^k."""
    N = cfg.N
    inside = np.sum(soup.site.astype(float) ** 2, axis=1) < (cfg.r * N) ** 2
    in_range = inside & (soup.n > N ** cfg.theta) & (soup.n < N ** cfg.k)
    if math.isinf(threshold_c):
        event_A = np.empty(0, dtype=np.int64)
    else:
        event_A = np.nonzero(in_range & (soup.loop_sup >= _event_A_threshold(cfg, threshold_c)))[0]
    large_n = np.nonzero(soup.n >= N ** cfg.k)[0]
    return list(event_A), list(large_n)


@dataclass
class ScalingFit:
    slope: float
    ci: tuple
    censored: bool
    Ns: list
    frequencies: list
    upper_bounds: list


def failure_scaling_study(configs, threshold_c=None, level=0.95):
    """Log-log regression of failure frequency against N over >= 4 configs."""
    if len(configs) < 4:
        raise ConfigError("failure scaling study needs at least 4 values of N")
    reports = [run_experiment(cfg, threshold_c) for cfg in configs]
    Ns = [cfg.N for cfg in configs]
    freq = [rep.failure_frequency for rep in reports]
    # one-sided 95% upper bound when no failure is seen: 1 - 0.05^{1/reps}
    upper = [f if f > 0 else 1.0 - (1.0 - level) ** (1.0 / cfg.reps) for f, cfg in zip(freq, configs)]
    pos = [i for i, f in enumerate(freq) if f > 0]
    if len(pos) < 3:
        return ScalingFit(math.nan, (math.nan, math.nan), True, Ns, freq, upper)
    x = np.log([Ns[i] for i in pos])
    y = np.log([freq[i] for i in pos])
    fit = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + level / 2.0, len(pos) - 2)
    return ScalingFit(float(fit.slope), (fit.slope - t * fit.stderr, fit.slope + t * fit.stderr),
                      False, Ns, freq, upper)


def fit_sup_scaling(reports, exponent=-1.0, percentile=99):
    """Ratios percentile / (N^exponent log N) and the log-log slope of the percentile in N."""
    Ns = np.array([rep.config["N"] for rep in reports], dtype=float)
    vals = np.array([rep.sup_dist_percentiles[percentile] for rep in reports])
    ratios = vals / (Ns ** exponent * np.log(Ns))
    slope = float(stats.linregress(np.log(Ns), np.log(vals)).slope) if len(Ns) > 1 else math.nan
    return {"N": Ns.tolist(), "value": vals.tolist(), "ratio": ratios.tolist(),
            "ratio_spread": float(ratios.max() / ratios.min()), "slope": slope}


def discrete_d3_study(cfg, Ns):
    """Sup-distance percentiles of the discrete d >= 3 pipeline against N^{(a-d)/(2d)} log N."""
    if cfg.d < 3 or cfg.variant != "discrete":
        raise ConfigError("the d >= 3 study needs the discrete variant with d >= 3")
    exponent = (cfg.a - cfg.d) / (2.0 * cfg.d)
    reports = [run_experiment(ExperimentConfig(**{**asdict(cfg), "N": N})) for N in Ns]
    out = fit_sup_scaling(reports, exponent)
    out["exponent"] = exponent
    out["reports"] = reports
    return out
