"""Dyadic quantile coupling of lattice bridges with Brownian bridges.

At every dyadic split the walk's conditional midpoint law (hypergeometric for
discrete time, a product of Bessel kernels for continuous time) and the
Brownian conditional midpoint law (Gaussian) are inverted against one shared
uniform.  Both marginals stay exact: each member is generated by its own
exact conditional laws, the shared uniform only correlates them.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ive, ndtri

from .bridges import (WINDOW_SD, bisect_refine, brownian_levels, fill_continuous_cells,
                      refine_at, sample_coordinate_counts, _merge_coordinate_jumps)
from .errors import PrecisionError
from .loops import RootedLoop, sup_distance
from .masses import check_dim, check_variant
from .rng import open_uniform

# cap on Brownian grid points per coordinate (memory bound for huge loops)
MAX_BROWNIAN_POINTS = 2 ** 22
# expected jumps per cell below which continuous cells are filled directly
CELL_JUMPS = 4.0
_CHUNK = 2 ** 23


@dataclass
class CoupledBridgePair:
    walk: RootedLoop
    brownian: RootedLoop  # standard bridge on [0, 1]
    scale: float  # (t_walk / d)^{1/2}
    sup_dist: float


def measure_sup_distance(pair, grid_points=0):
    """sup_s |walk(s t_walk) - scale * brownian(s)| over all breakpoints (plus a dyadic grid)."""
    return sup_distance(pair.walk, pair.brownian.rescaled(space=pair.scale), extra_points=grid_points)


def _make_pair(walk, brownian, d):
    scale = math.sqrt(walk.t_len / d)
    pair = CoupledBridgePair(walk, brownian, scale, 0.0)
    pair.sup_dist = measure_sup_distance(pair)
    return pair


# --------------------------------------------------------------------------
# windowed inverse CDFs
# --------------------------------------------------------------------------

def _row_chunks(rows, width):
    step = max(1, _CHUNK // max(width, 1))
    for i in range(0, rows, step):
        yield slice(i, min(rows, i + step))


def _quantile_from_logp(lo, logp, u):
    """Smallest lo + j with cdf_j >= u for rows of unnormalized log-probabilities."""
    return _quantile_from_p(lo, np.exp(logp - logp.max(axis=1, keepdims=True)), u)


def _quantile_from_p(lo, p, u):
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    return lo + np.minimum((cdf < u[:, None]).sum(axis=1), p.shape[1] - 1)


def hypergeom_quantile(total, ups, draws, u):
    """Generalized inverse of the number of ups among ``draws`` of ``total`` steps with ``ups`` ups."""
    total, ups, draws = (np.asarray(x, dtype=float) for x in (total, ups, draws))
    u = np.asarray(u)
    mean = draws * ups / total
    var = draws * (total - draws) * ups * (total - ups) / (total ** 2 * np.maximum(total - 1, 1))
    half = np.ceil(WINDOW_SD * np.sqrt(var)) + 10
    s_lo = np.maximum(0, draws - (total - ups))
    s_hi = np.minimum(ups, draws)
    lo = np.maximum(s_lo, np.floor(mean - half)).astype(np.int64)
    hi = np.minimum(s_hi, np.ceil(mean + half)).astype(np.int64)
    out = np.empty(len(u), dtype=np.int64)
    width = int((hi - lo).max()) + 1
    for sl in _row_chunks(len(u), width):
        k = lo[sl, None] + np.arange(width)[None, :]
        U, L1, L = ups[sl, None], draws[sl, None], total[sl, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            lr = (np.log(np.maximum(U - k, 0)) + np.log(np.maximum(L1 - k, 0))
                  - np.log(k + 1.0) - np.log(np.maximum(L - U - L1 + k + 1.0, 0)))
        logp = np.concatenate([np.zeros((k.shape[0], 1)), np.cumsum(lr[:, :-1], axis=1)], axis=1)
        logp[k > hi[sl, None]] = -np.inf
        out[sl] = _quantile_from_logp(lo[sl], logp, u[sl])
    return out


def bessel_midpoint_quantile(left, right, x_half, u):
    """Generalized inverse of P(X = x) proportional to p(x - left) p(right - x), where
    p(k) = e^{-x_half} I_|k|(x_half) is the rate-x_half walk kernel."""
    left, right, u = np.asarray(left), np.asarray(right), np.asarray(u)
    half = int(math.ceil(WINDOW_SD * math.sqrt(x_half / 2.0 + 1.0))) + 10
    lo = (left + right) // 2 - half
    width = 2 * half + 2
    out = np.empty(len(u), dtype=np.int64)
    # the kernel only depends on |order|, so tabulate it once
    ends = np.concatenate([lo, lo + width - 1])
    max_order = int(max(np.abs(ends - np.tile(left, 2)).max(), np.abs(np.tile(right, 2) - ends).max()))
    kernel = ive(np.arange(max_order + 1), x_half)
    for sl in _row_chunks(len(u), width):
        x = lo[sl, None] + np.arange(width)[None, :]
        p = kernel[np.abs(x - left[sl, None])] * kernel[np.abs(right[sl, None] - x)]
        if np.any(p.sum(axis=1) <= 0):
            raise PrecisionError("Bessel midpoint law underflowed")
        out[sl] = _quantile_from_p(lo[sl], p, u[sl])
    return out


# --------------------------------------------------------------------------
# batched one-dimensional couplings
# --------------------------------------------------------------------------

def couple_discrete_paths(length, batch, rng):
    """Coupled walk/Brownian bridge paths on integer times 0..length (length even).

    Returns ``(walk, brown)`` of shape (batch, length + 1); the walk is a simple
    random-walk bridge, ``brown`` a unit-rate Brownian bridge at integer times.
    """
    walk = np.zeros((batch, length + 1), dtype=np.int64)
    brown = np.zeros((batch, length + 1))
    lft, rgt = np.array([0]), np.array([length])
    while lft.size:
        mid = lft + (rgt - lft) // 2
        span, first = rgt - lft, mid - lft
        delta = walk[:, rgt] - walk[:, lft]
        u = open_uniform(rng, delta.shape)
        total = np.broadcast_to(span, delta.shape).ravel()
        draws = np.broadcast_to(first, delta.shape).ravel()
        k = hypergeom_quantile(total, ((span + delta) // 2).ravel(), draws, u.ravel())
        walk[:, mid] = walk[:, lft] + (2 * k - draws).reshape(delta.shape)
        w = first / span
        sd = np.sqrt(first * (span - first) / span)
        brown[:, mid] = brown[:, lft] + w * (brown[:, rgt] - brown[:, lft]) + sd * ndtri(u)
        keep_l, keep_r = first >= 2, (span - first) >= 2
        lft, rgt = np.concatenate([lft[keep_l], mid[keep_r]]), np.concatenate([mid[keep_l], rgt[keep_r]])
    return walk, brown


def couple_continuous_grid(t_len, rate, batch, rng):
    """Coupled values on the dyadic grid of [0, t_len] down to cells with rate * tau < CELL_JUMPS.

    Returns ``(levels, walk, brown)``; ``brown`` has variance rate ``rate``.
    """
    levels = 0
    while rate * t_len / 2 ** levels >= CELL_JUMPS:
        levels += 1
    walk = np.zeros((batch, 2 ** levels + 1), dtype=np.int64)
    brown = np.zeros((batch, 2 ** levels + 1))
    for j in range(levels):
        step = 2 ** (levels - j)
        lft = np.arange(0, 2 ** levels, step)
        mid, rgt = lft + step // 2, lft + step
        tau = t_len / 2 ** j
        u = open_uniform(rng, (batch, len(lft)))
        walk[:, mid] = bessel_midpoint_quantile(walk[:, lft].ravel(), walk[:, rgt].ravel(),
                                                rate * tau / 2.0, u.ravel()).reshape(u.shape)
        brown[:, mid] = 0.5 * (brown[:, lft] + brown[:, rgt]) + math.sqrt(rate * tau / 4.0) * ndtri(u)
    return levels, walk, brown


def _extra_levels(points, levels_wanted, coarse_levels):
    extra = max(0, levels_wanted - coarse_levels)
    while extra and points * 2 ** extra > MAX_BROWNIAN_POINTS:
        extra -= 1
    return extra


def _standard_brownian(times, values, t_len, var_rate, d_levels):
    """Brownian member rescaled to a standard bridge on [0, 1]."""
    s = times / t_len
    s[-1] = 1.0
    pts = values.T / math.sqrt(var_rate * t_len)
    return RootedLoop("brownian", pts.shape[1], 1.0, s, pts, d_levels)


def couple_1d_discrete(n, stream, levels=None):
    """Couple a length-2n simple random-walk bridge on Z with a Brownian bridge."""
    if int(n) != n or n < 1:
        raise ValueError("n must be an integer >= 1")
    n = int(n)
    rng = stream.generator()
    walk, brown = couple_discrete_paths(2 * n, 1, rng)
    times = np.arange(2 * n + 1, dtype=float)
    coarse = math.ceil(math.log2(2 * n))
    extra = _extra_levels(2 * n + 1, brownian_levels(n) if levels is None else levels, coarse)
    times, brown = bisect_refine(times, brown, extra, 1.0, rng)
    w = RootedLoop("rw_discrete", 1, float(2 * n), np.arange(2 * n + 1, dtype=float), walk.T)
    return _make_pair(w, _standard_brownian(times, brown, 2.0 * n, 1.0, coarse + extra), 1)


def _couple_continuous_coords(d, t_len, rate, stream, levels):
    rng = stream.generator()
    j, walk, brown = couple_continuous_grid(t_len, rate, d, rng)
    cells = 2 ** j
    tau = t_len / cells
    starts = np.tile(np.arange(cells) * tau, d)
    jt, signs, cell = fill_continuous_cells(starts, tau, rate, np.diff(walk, axis=1).ravel(), rng)
    owner = cell // cells
    jumps = [(jt[owner == i], signs[owner == i]) for i in range(d)]
    times, pts = _merge_coordinate_jumps(d, jumps)
    want = brownian_levels(max(1, int(t_len / 2))) if levels is None else levels
    extra = _extra_levels(cells + 1, want, j)
    grid = np.linspace(0.0, t_len, cells + 1)
    grid, brown = bisect_refine(grid, brown, extra, rate, rng)
    w = RootedLoop("rw_continuous", d, float(t_len), times, pts)
    return _make_pair(w, _standard_brownian(grid, brown, t_len, rate, j + extra), d)


def couple_1d_continuous(t_len, rate, stream, levels=None):
    """Couple a rate-``rate`` continuous-time walk bridge on Z of length t_len with a Brownian bridge.

    The walk is compared with sqrt(rate t_len) times the standard bridge.
    """
    if t_len <= 0 or rate <= 0:
        raise ValueError("need t_len > 0 and rate > 0")
    pair = _couple_continuous_coords(1, t_len, rate, stream, levels)
    pair.scale = math.sqrt(rate * t_len)
    pair.sup_dist = measure_sup_distance(pair)
    return pair


def _couple_rotated_2d(n, stream, levels):
    """d = 2 discrete: the coordinates x + y and x - y of a planar bridge are independent 1d bridges."""
    rng = stream.generator()
    walk, brown = couple_discrete_paths(2 * n, 2, rng)
    times = np.arange(2 * n + 1, dtype=float)
    coarse = math.ceil(math.log2(2 * n))
    extra = _extra_levels(2 * n + 1, brownian_levels(n) if levels is None else levels, coarse)
    times, brown = bisect_refine(times, brown, extra, 1.0, rng)
    pts = np.column_stack([(walk[0] + walk[1]) // 2, (walk[0] - walk[1]) // 2])
    xy = np.vstack([(brown[0] + brown[1]) / 2.0, (brown[0] - brown[1]) / 2.0])
    w = RootedLoop("rw_discrete", 2, float(2 * n), np.arange(2 * n + 1, dtype=float), pts)
    return _make_pair(w, _standard_brownian(times, xy, 2.0 * n, 0.5, coarse + extra), 2)


def _couple_coordinatewise(d, n, stream, levels):
    """d >= 3 discrete: per-coordinate 1d couplings glued by a uniform interleaving of steps."""
    rng = stream.generator()
    k = sample_coordinate_counts(d, n, rng)
    label = rng.permutation(np.repeat(np.arange(d), 2 * k))
    pts = np.zeros((2 * n + 1, d), dtype=np.int64)
    grids, values = [], []
    for i in range(d):
        if k[i] == 0:
            grids.append(np.array([0.0, 1.0]))
            values.append(np.zeros(2))
            continue
        walk, brown = couple_discrete_paths(2 * int(k[i]), 1, rng)
        # coordinate i after global step m equals its own walk after (#i-steps among the first m)
        own = np.concatenate([[0], np.cumsum(label == i)])
        pts[:, i] = walk[0, own]
        grids.append(np.arange(2 * k[i] + 1) / (2.0 * k[i]))
        values.append(brown[0] / math.sqrt(2.0 * k[i]))
    union = np.unique(np.concatenate(grids + [np.arange(2 * n + 1) / (2.0 * n)]))
    coarse = math.ceil(math.log2(max(len(union) - 1, 1)))
    extra = _extra_levels(len(union), brownian_levels(n) if levels is None else levels, coarse)
    fine = bisect_refine(union, np.zeros((1, len(union))), extra, 0.0, rng)[0]
    cols = []
    for i in range(d):
        t_i, v_i = refine_at(grids[i], values[i][None, :], fine, 1.0, rng)
        cols.append(v_i[0])
    w = RootedLoop("rw_discrete", d, float(2 * n), np.arange(2 * n + 1, dtype=float), pts)
    b = RootedLoop("brownian", d, 1.0, fine, np.column_stack(cols), coarse + extra)
    return _make_pair(w, b, d)


def couple_bridges(d, variant, time_or_n, stream, levels=None):
    """Coupled lattice/Brownian bridge pair in Z^d.

    ``time_or_n`` is n (walk length 2n) for the discrete variant and the time
    length for the continuous one.
    """
    check_dim(d)
    check_variant(variant)
    if variant == "continuous":
        if time_or_n <= 0:
            raise ValueError("time length must be > 0")
        return _couple_continuous_coords(d, float(time_or_n), 1.0 / d, stream, levels)
    n = int(time_or_n)
    if n != time_or_n or n < 1:
        raise ValueError("n must be an integer >= 1")
    if d == 1:
        return couple_1d_discrete(n, stream, levels)
    if d == 2:
        return _couple_rotated_2d(n, stream, levels)
    return _couple_coordinatewise(d, n, stream, levels)
