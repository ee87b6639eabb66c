"""Poisson fields of loops in a finite window and the coupled soups built on them.

Every arrival carries the label (n, z, m): loop-size cell n, lattice root z and
rank m among the cell's arrivals ordered by their "lambda-time".  The soup at
intensity lambda keeps the arrivals with lambda-time <= lambda, so soups at
increasing intensities are nested by construction.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bridges import sample_brownian_bridge, sample_continuous_bridge, sample_discrete_bridge
from .coupling import couple_bridges
from .errors import ConfigError
from .loops import RootedLoop, sup_distance
from .masses import _gl, check_dim, check_variant, heat_kernel_return, mass_model
from .rng import open_uniform


@dataclass(frozen=True)
class SoupWindow:
    d: int
    variant: str
    N: int
    r: float
    n_min: int
    n_max: int
    lambdas: tuple = (1.0,)

    def __post_init__(self):
        check_dim(self.d)
        check_variant(self.variant)
        if self.N < 1 or int(self.N) != self.N:
            raise ConfigError(f"N must be an integer >= 1, got {self.N}")
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ConfigError(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise ConfigError("lambda levels must be positive and strictly increasing")

    @property
    def lam_max(self):
        return float(self.lambdas[-1])

    def sites(self):
        """Lattice roots z with |z| <= r N, in lexicographic order."""
        R = int(math.floor(self.r * self.N))
        axis = np.arange(-R, R + 1)
        grid = np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)
        return grid[np.sum(grid.astype(float) ** 2, axis=1) <= (self.r * self.N) ** 2]

    def site_count(self):
        return len(self.sites())


def _dyadic_blocks(lo, hi):
    """Split [lo, hi] into [2^j, 2^{j+1}) pieces; returns block edges (left, right-exclusive)."""
    edges = [lo]
    while edges[-1] <= hi:
        nxt = 1 << int(edges[-1]).bit_length()
        edges.append(min(nxt, hi + 1))
        if edges[-1] == hi + 1:
            break
    return np.array(edges[:-1], dtype=np.int64), np.array(edges[1:], dtype=np.int64)


@dataclass
class PoissonField:
    window: SoupWindow
    n: np.ndarray
    site: np.ndarray  # (A, d) lattice roots
    m: np.ndarray  # rank within the (n, z) cell, 1-based
    lam_time: np.ndarray

    def __len__(self):
        return len(self.n)

    def mask(self, lam):
        return self.lam_time <= lam

    def restrict(self, lam):
        keep = self.mask(lam)
        return PoissonField(self.window, self.n[keep], self.site[keep], self.m[keep], self.lam_time[keep])

    def labels(self, lam=None):
        """Set of (n, z..., m) labels present at intensity lam (all arrivals if None)."""
        keep = np.ones(len(self), dtype=bool) if lam is None else self.mask(lam)
        return {(int(n), *map(int, z), int(m))
                for n, z, m in zip(self.n[keep], self.site[keep], self.m[keep])}

    def cell_counts(self, lam):
        """Map (n, z) -> number of arrivals at intensity lam."""
        keep = self.mask(lam)
        out = {}
        for n, z in zip(self.n[keep], self.site[keep]):
            key = (int(n), *map(int, z))
            out[key] = out.get(key, 0) + 1
        return out


def sample_poisson_field(window, stream):
    """Arrivals of independent Poisson processes, one per (n, z) cell of the window.

    Cell (n, z) has rate mass(n) in the lambda variable.  Counts are drawn per
    site and dyadic block of n, then n inside a block by exact tail inversion.
    """
    model = mass_model(window.d, window.variant)
    sites = window.sites()
    rng = stream.child("field").generator()
    lo, hi = _dyadic_blocks(window.n_min, window.n_max)
    block_mass = model.tail(lo) - model.tail(hi)
    counts = rng.poisson(window.lam_max * block_mass[None, :], size=(len(sites), len(lo)))
    site_idx = np.repeat(np.repeat(np.arange(len(sites)), len(lo)), counts.ravel())
    block = np.repeat(np.tile(np.arange(len(lo)), len(sites)), counts.ravel())
    u = rng.random(len(block))
    target = model.tail(lo[block]) - u * block_mass[block]
    n = np.empty(len(block), dtype=np.int64)
    for b in range(len(lo)):
        sel = block == b
        if sel.any():
            n[sel] = model.inverse_tail(target[sel], lo[b], hi[b] - 1)
    lam_time = window.lam_max * (1.0 - rng.random(len(block)))
    order = np.lexsort((lam_time, n, site_idx))
    n, site_idx, lam_time = n[order], site_idx[order], lam_time[order]
    first = np.ones(len(n), dtype=bool)
    first[1:] = (n[1:] != n[:-1]) | (site_idx[1:] != site_idx[:-1])
    start = np.maximum.accumulate(np.where(first, np.arange(len(n)), 0))
    m = np.arange(len(n)) - start + 1
    return PoissonField(window, n, sites[site_idx], m, lam_time)


# --------------------------------------------------------------------------
# time lengths
# --------------------------------------------------------------------------

def sample_walk_times(d, n, u, tol=1e-12):
    """Inverse CDF of the density proportional to q_d(t) on [2n, 2n+2).

    Safeguarded Newton iteration on the Gauss-Legendre cell integral.
    """
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    lo, hi = 2.0 * n, 2.0 * n + 2.0
    total = _gl(d, lo, hi)
    a, b = lo.copy(), hi.copy()
    t = lo + 2.0 * u
    for _ in range(60):
        f = _gl(d, lo, t) / total - u
        a = np.where(f < 0, t, a)
        b = np.where(f >= 0, t, b)
        dens = heat_kernel_return(d, t) / t / total
        step = t - f / dens
        bad = (step <= a) | (step >= b)
        t_new = np.where(bad, 0.5 * (a + b), step)
        if np.max(np.abs(t_new - t)) < tol:
            t = t_new
            break
        t = t_new
    return np.clip(t, lo, np.nextafter(hi, lo))


def sample_brownian_times(seq, n, u):
    """Inverse CDF of the density proportional to s^{-d/2-1} on [a_n, a_{n+1}]."""
    n = np.asarray(n)
    a_lo = np.atleast_1d(seq.a_at(n))
    a_hi = np.atleast_1d(seq.a_at(n + 1))
    r = np.atleast_1d(seq.cell_ratio(n))
    t = a_lo * np.exp(-(2.0 / seq.d) * np.log1p(-np.asarray(u) * r))
    return np.clip(t, a_lo, a_hi)


# --------------------------------------------------------------------------
# soups
# --------------------------------------------------------------------------

def _label(n, z, m):
    return (int(n), *map(int, z), int(m))


def _arrival_draws(field, stream):
    """Per-arrival uniforms (walk time, Brownian time) and root jitter, from (n, z, m) keyed streams."""
    A, d = len(field), field.window.d
    u = np.empty((A, 2))
    jitter = np.empty((A, d))
    for i in range(A):
        rng = stream.child("times", *_label(field.n[i], field.site[i], field.m[i])).generator()
        u[i] = open_uniform(rng, 2)
        # (-1/2, 1/2]: the cube whose nearest lattice point under the tie rule is z
        jitter[i] = 0.5 - rng.random(d)
    return u, jitter


def _walk_times(field, u):
    if field.window.variant == "discrete":
        return 2.0 * field.n.astype(float)
    if len(field) == 0:
        return np.empty(0)
    return sample_walk_times(field.window.d, field.n, u[:, 0])


@dataclass
class CoupledSoupPair:
    n: np.ndarray
    site: np.ndarray
    m: np.ndarray
    lam_time: np.ndarray
    t_walk: np.ndarray
    t_brown: np.ndarray
    jitter: np.ndarray
    pair_sup: np.ndarray  # sup |walk - (t_walk/d)^{1/2} b|, the bridge-level discrepancy
    loop_sup: np.ndarray  # sup_s |gamma(s T) - gamma_tilde(s T_tilde)| between the soup loops
    rw_soup: list = field(default_factory=list)
    br_soup: list = field(default_factory=list)
    pairing: list = field(default_factory=list)  # (rw index, br index, label)
    uncoupled_rw: list = field(default_factory=list)
    uncoupled_br: list = field(default_factory=list)

    def __len__(self):
        return len(self.n)

    def restrict(self, lam):
        keep = np.nonzero(self.lam_time <= lam)[0]
        arrays = {k: getattr(self, k)[keep] for k in
                  ("n", "site", "m", "lam_time", "t_walk", "t_brown", "jitter", "pair_sup", "loop_sup")}
        if self.rw_soup:
            remap = {int(old): new for new, old in enumerate(keep)}
            pairing = [(remap[i], remap[j], lab) for i, j, lab in self.pairing if i in remap]
            return replace(self, **arrays, rw_soup=[self.rw_soup[i] for i in keep],
                           br_soup=[self.br_soup[i] for i in keep], pairing=pairing)
        return replace(self, **arrays, pairing=[])


def build_coupled_brownian_soup(field, window, seq, stream, keep_paths=True, levels=None):
    """Couple every arrival's lattice loop with a Brownian loop of the same label.

    The walk has time length T_tilde (exactly 2n for the discrete variant) and
    root z; the Brownian loop has time T drawn on [a_n, a_{n+1}] and root
    z + Y.  Both come from the coupled bridge pair keyed by (n, z, m).
    """
    if seq.d != window.d or seq.variant != window.variant:
        raise ConfigError("a_n sequence does not match the window's dimension/variant")
    d = window.d
    u, jitter = _arrival_draws(field, stream)
    t_walk = _walk_times(field, u)
    t_brown = sample_brownian_times(seq, field.n, u[:, 1]) if len(field) else np.empty(0)
    pair_sup = np.empty(len(field))
    loop_sup = np.empty(len(field))
    out = CoupledSoupPair(field.n, field.site, field.m, field.lam_time, t_walk, t_brown,
                          jitter, pair_sup, loop_sup)
    for i in range(len(field)):
        label = _label(field.n[i], field.site[i], field.m[i])
        arg = int(field.n[i]) if window.variant == "discrete" else float(t_walk[i])
        pair = couple_bridges(d, window.variant, arg, stream.child("pair", *label), levels)
        walk = pair.walk.translated(field.site[i])
        brown = pair.brownian.rescaled(space=math.sqrt(t_brown[i]), time=t_brown[i]).translated(
            field.site[i] + jitter[i])
        pair_sup[i] = pair.sup_dist
        loop_sup[i] = sup_distance(walk, brown)
        if keep_paths:
            out.rw_soup.append(walk)
            out.br_soup.append(brown)
            out.pairing.append((i, i, label))
    return out


def build_rw_soup(field, window, stream, coupled=True, levels=None):
    """Lattice loops of the field.

    With ``coupled=True`` the walks are the lattice members of the coupled
    pairs (identical to those of :func:`build_coupled_brownian_soup` for the
    same stream).  Otherwise they come from the direct bridge samplers.  The
    law is the same either way.
    """
    d = window.d
    u, _ = _arrival_draws(field, stream)
    t_walk = _walk_times(field, u)
    loops = []
    for i in range(len(field)):
        label = _label(field.n[i], field.site[i], field.m[i])
        key = stream.child("pair", *label)
        if coupled:
            arg = int(field.n[i]) if window.variant == "discrete" else float(t_walk[i])
            walk = couple_bridges(d, window.variant, arg, key, levels).walk
        elif window.variant == "discrete":
            walk = sample_discrete_bridge(d, int(field.n[i]), key)
        else:
            walk = sample_continuous_bridge(d, float(t_walk[i]), key)
        loops.append(walk.translated(field.site[i]))
    return loops


def brownian_soup_mass(d, t_min, t_max=math.inf):
    """(2 pi)^{-d/2} int_{t_min}^{t_max} s^{-d/2-1} ds."""
    if t_min <= 0:
        raise ValueError("t_min must be > 0 (the Brownian loop measure has infinite mass near 0)")
    h = d / 2.0
    upper = 0.0 if math.isinf(t_max) else t_max ** -h
    return (2.0 * math.pi) ** -h * (t_min ** -h - upper) / h


def sample_brownian_soup_direct(window, t_min, lam, stream, t_max=math.inf, levels=8):
    """Brownian loop soup with roots in the window's unit cubes and t_min <= t < t_max, sampled directly."""
    d = window.d
    mass = brownian_soup_mass(d, t_min, t_max)
    sites = window.sites()
    rng = stream.child("direct").generator()
    count = rng.poisson(lam * mass * len(sites)) if len(sites) else 0
    which = rng.integers(0, len(sites), count) if count else np.empty(0, dtype=np.int64)
    roots = sites[which] + 0.5 - rng.random((count, d))
    h = d / 2.0
    upper = 0.0 if math.isinf(t_max) else t_max ** -h
    times = (t_min ** -h - rng.random(count) * (t_min ** -h - upper)) ** (-1.0 / h)
    loops = []
    for i in range(count):
        b = sample_brownian_bridge(d, float(times[i]), levels, stream.child("direct-loop", i))
        loops.append(b.translated(roots[i]))
    return loops


def sample_small_loops(window, lam, t_floor, a_1, stream, levels=8):
    """Loops below the coupled range, truncated at time t_floor.

    Brownian loops with t_floor <= t < a_1 and, for the continuous variant,
    lattice loops with t_floor <= t < 2.  Lattice times are drawn by rejection
    from the log-uniform law with acceptance p_t(0, 0) <= 1.
    """
    if t_floor <= 0:
        raise ValueError("t_floor must be > 0")
    d = window.d
    sites = window.sites()
    rng = stream.child("small").generator()
    br = []
    if t_floor < a_1:
        br_window = replace(window, n_min=1, n_max=1)
        br = sample_brownian_soup_direct(br_window, t_floor, lam, stream.child("small-br"), a_1, levels)
    rw = []
    if window.variant == "continuous" and t_floor < 2.0:
        edges = np.geomspace(t_floor, 2.0, max(2, int(math.ceil(math.log2(2.0 / t_floor))) + 1))
        mass = float(np.sum(_gl(d, edges[:-1], edges[1:])))
        count = rng.poisson(lam * mass * len(sites))
        times = []
        while len(times) < count:
            t = t_floor * (2.0 / t_floor) ** rng.random()
            if rng.random() < heat_kernel_return(d, t):
                times.append(t)
        which = rng.integers(0, len(sites), count)
        for i in range(count):
            loop = sample_continuous_bridge(d, times[i], stream.child("small-rw", i))
            rw.append(loop.translated(sites[which[i]]))
    return rw, br


def soup_summary(loops):
    """(count, mean time length, mean root norm) of a list of loops."""
    if not loops:
        return 0, math.nan, math.nan
    t = np.array([lp.t_len for lp in loops])
    roots = np.array([lp.root for lp in loops], dtype=float)
    return len(loops), float(t.mean()), float(np.linalg.norm(roots, axis=1).mean())
