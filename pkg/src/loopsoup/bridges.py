"""Exact samplers for Brownian, discrete-time and continuous-time lattice bridges.

All samplers return loops rooted at the origin.  Randomness comes from a
:class:`~loopsoup.rng.RandomStream`, so equal keys give identical loops.
"""
import math
from functools import lru_cache

import numpy as np

from .loops import RootedLoop
from .masses import check_dim, i0e
from .rng import open_uniform

# probability mass outside the +-12 sd windows used below is < 1e-30
WINDOW_SD = 12.0


def brownian_levels(n):
    """Default dyadic resolution for a Brownian loop paired with a length-2n walk."""
    return max(8, math.ceil(math.log2(max(n, 1))) + 4)


# --------------------------------------------------------------------------
# Gaussian bridge refinement
# --------------------------------------------------------------------------

def bisect_refine(times, values, levels, var_rate, rng):
    """Insert midpoints ``levels`` times into every interval of ``times``.

    ``values`` has shape (B, m): B independent paths with variance rate
    ``var_rate`` observed on the grid ``times``.  Each midpoint is drawn from its
    exact conditional law given the two neighbours.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    for _ in range(levels):
        mids = 0.5 * (times[:-1] + times[1:])
        sd = np.sqrt(var_rate * np.diff(times) / 4.0)
        new = 0.5 * (values[:, :-1] + values[:, 1:]) + sd * rng.standard_normal(
            (values.shape[0], len(mids)))
        t_out = np.empty(2 * len(times) - 1)
        t_out[0::2], t_out[1::2] = times, mids
        v_out = np.empty((values.shape[0], len(t_out)))
        v_out[:, 0::2], v_out[:, 1::2] = values, new
        times, values = t_out, v_out
    return times, values


def refine_at(times, values, new_times, var_rate, rng):
    """Insert arbitrary new observation times into Gaussian bridge paths.

    Points falling inside the same interval are drawn left to right, each
    conditioned on its left neighbour (already drawn) and the interval's right
    end, which gives the exact joint law.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    new_times = np.setdiff1d(np.asarray(new_times, dtype=float), times)
    if new_times.size == 0:
        return times, values
    right = np.searchsorted(times, new_times)
    if np.any((right == 0) | (right == len(times))):
        raise ValueError("new times must lie strictly inside the observed range")
    B = values.shape[0]
    new_vals = np.empty((B, len(new_times)))
    first = np.ones(len(new_times), dtype=bool)
    first[1:] = right[1:] != right[:-1]
    rank = np.arange(len(new_times)) - np.maximum.accumulate(np.where(first, np.arange(len(new_times)), 0))
    for r in range(int(rank.max()) + 1):
        idx = np.nonzero(rank == r)[0]
        if r == 0:
            t_l, v_l = times[right[idx] - 1], values[:, right[idx] - 1]
        else:
            t_l, v_l = new_times[idx - 1], new_vals[:, idx - 1]
        t_r, v_r = times[right[idx]], values[:, right[idx]]
        t = new_times[idx]
        w = (t - t_l) / (t_r - t_l)
        sd = np.sqrt(var_rate * (t - t_l) * (t_r - t) / (t_r - t_l))
        new_vals[:, idx] = v_l + w * (v_r - v_l) + sd * rng.standard_normal((B, len(idx)))
    all_t = np.concatenate([times, new_times])
    order = np.argsort(all_t, kind="stable")
    return all_t[order], np.concatenate([values, new_vals], axis=1)[:, order]


def sample_brownian_bridge(d, t_len, levels, stream):
    """Standard d-dimensional Brownian bridge 0 -> 0 on [0, t_len] at 2^levels + 1 dyadic times."""
    check_dim(d)
    if t_len <= 0 or levels < 1:
        raise ValueError("need t_len > 0 and levels >= 1")
    rng = stream.generator()
    times, vals = bisect_refine([0.0, float(t_len)], np.zeros((d, 2)), levels, 1.0, rng)
    times[-1] = float(t_len)
    return RootedLoop("brownian", d, float(t_len), times, vals.T.copy(), levels)


# --------------------------------------------------------------------------
# discrete-time bridges
# --------------------------------------------------------------------------

def _normalized_from_log_ratios(log_ratios):
    """Probabilities p_j proportional to exp(sum_{i<j} log_ratios_i), j = 0..len."""
    logp = np.concatenate([[0.0], np.cumsum(log_ratios)])
    p = np.exp(logp - logp.max())
    return p / p.sum()


@lru_cache(maxsize=64)
def _log_weight_table(m, n):
    """log W_m(r), r = 0..n, W_m(r) = sum_{k_1+..+k_m=r} prod 1/(k_i!)^2 (m >= 3 only)."""
    from scipy.special import gammaln, logsumexp

    log_w1 = -2.0 * gammaln(np.arange(n + 1) + 1.0)
    log_w = log_w1.copy()
    for _ in range(m - 1):
        log_w = np.array([logsumexp(log_w[: r + 1] + log_w1[r::-1]) for r in range(n + 1)])
    return log_w


def _first_count_probs(m, n):
    """Law of k_1 given k_1 + .. + k_m = n with weight prod 1/(k_i!)^2."""
    j = np.arange(n, dtype=float)
    if m == 2:
        # proportional to C(n, j)^2
        return _normalized_from_log_ratios(2.0 * (np.log(n - j) - np.log(j + 1.0)))
    if m == 3:
        # proportional to C(2(n-j), n-j) / (j! (n-j)!)^2
        r = n - j
        return _normalized_from_log_ratios(
            np.log(r / (2.0 * (2.0 * r - 1.0))) + 2.0 * np.log(r) - 2.0 * np.log(j + 1.0))
    from scipy.special import gammaln

    rest = _log_weight_table(m - 1, n)
    logp = -2.0 * gammaln(np.arange(n + 1) + 1.0) + rest[::-1]
    p = np.exp(logp - logp.max())
    return p / p.sum()


def sample_coordinate_counts(d, n, rng):
    """Draw (k_1..k_d), sum k_i = n, with probability proportional to (2n)!/prod(k_i!)^2."""
    counts = np.zeros(d, dtype=np.int64)
    left = n
    for i in range(d - 1):
        if left == 0:
            break
        p = _first_count_probs(d - i, left)
        k = min(int(np.searchsorted(np.cumsum(p), rng.random(), side="right")), left)
        counts[i] = k
        left -= k
    counts[d - 1] = left
    return counts


def _steps_to_vertices(d, coords, signs):
    steps = np.zeros((len(coords), d), dtype=np.int64)
    steps[np.arange(len(coords)), coords] = signs
    pts = np.zeros((len(coords) + 1, d), dtype=np.int64)
    np.cumsum(steps, axis=0, out=pts[1:])
    return pts


def sample_discrete_bridge(d, n, stream):
    """Uniform closed path of length 2n from the origin of Z^d."""
    check_dim(d)
    if int(n) != n or n < 1:
        raise ValueError("n must be an integer >= 1")
    rng = stream.generator()
    k = sample_coordinate_counts(d, int(n), rng)
    coords = np.repeat(np.arange(d), 2 * k)
    signs = np.concatenate([np.repeat([1, -1], [ki, ki]) for ki in k])
    order = rng.permutation(2 * int(n))
    pts = _steps_to_vertices(d, coords[order], signs[order])
    return RootedLoop("rw_discrete", d, float(2 * n), np.arange(2 * n + 1, dtype=float), pts)


# --------------------------------------------------------------------------
# continuous-time bridges
# --------------------------------------------------------------------------

def bessel_count_pmf(x, order):
    """Window of the law P(m) proportional to (x/2)^{2m+order} / (m! (m+order)!).

    This is the law of the number of down-jumps of a rate-x Poisson walk on Z
    over unit time conditioned to move by ``order``.  Returns ``(lo, pmf)``
    with ``pmf[i, j] = P(m = lo[i] + j)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nu = np.atleast_1d(np.asarray(order, dtype=float))
    x, nu = np.broadcast_arrays(x, nu)
    y = x / 2.0
    mode = np.floor(np.maximum(0.0, (-nu + np.sqrt(nu * nu + x * x)) / 2.0))
    half = np.ceil(WINDOW_SD * np.sqrt(y / 2.0 + 1.0)) + 10.0
    lo = np.maximum(0.0, mode - half).astype(np.int64)
    hi = (mode + half).astype(np.int64)
    width = int((hi - lo).max()) + 1
    m = lo[:, None] + np.arange(width)[None, :]
    with np.errstate(divide="ignore"):
        log_ratio = 2.0 * np.log(y)[:, None] - np.log(m + 1.0) - np.log(m + 1.0 + nu[:, None])
    logp = np.concatenate([np.zeros((len(x), 1)), np.cumsum(log_ratio[:, :-1], axis=1)], axis=1)
    logp[m > hi[:, None]] = -np.inf
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    return lo, p / p.sum(axis=1, keepdims=True)


def sample_bessel_counts(x, order, u):
    """Inverse-CDF draws from :func:`bessel_count_pmf` with uniforms ``u``."""
    x, order = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(order))
    if np.all(x == x[0]):
        # one table row per distinct order
        orders, inverse = np.unique(order, return_inverse=True)
        lo, pmf = bessel_count_pmf(np.full(len(orders), x[0]), orders)
        lo, pmf = lo[inverse], pmf[inverse]
    else:
        lo, pmf = bessel_count_pmf(x, order)
    cdf = np.cumsum(pmf, axis=1)
    idx = np.minimum((cdf < np.asarray(u)[:, None]).sum(axis=1), pmf.shape[1] - 1)
    return lo + idx


def no_jump_probability(d, t_len):
    """P(continuous-time bridge of length t_len makes no jump) = (e^{-t/d} I_0(t/d))^{-d} e^{-t}."""
    s = t_len / d
    return float(np.exp(-d * (np.log(i0e(s)) + s)))


def _merge_coordinate_jumps(d, jumps):
    """``jumps`` is a list over coordinates of (times, signs); returns times, vertices."""
    times = np.concatenate([jt for jt, _ in jumps]) if jumps else np.empty(0)
    coords = np.concatenate([np.full(len(jt), i) for i, (jt, _) in enumerate(jumps)])
    signs = np.concatenate([sg for _, sg in jumps])
    order = np.argsort(times, kind="stable")
    pts = _steps_to_vertices(d, coords[order].astype(np.int64), signs[order].astype(np.int64))
    return np.concatenate([[0.0], times[order]]), pts


def sample_continuous_bridge(d, t_len, stream):
    """Continuous-time simple random walk bridge 0 -> 0 on Z^d with time length t_len.

    Coordinates are independent rate-1/d walk bridges: coordinate i makes
    2m jumps with P(m) proportional to (t/(2d))^{2m}/(m!)^2, at uniform times,
    with a uniformly shuffled set of m up and m down jumps.
    """
    check_dim(d)
    if t_len <= 0:
        raise ValueError("t_len must be > 0")
    rng = stream.generator()
    jumps = []
    for _ in range(d):
        m = int(sample_bessel_counts(t_len / d, 0, rng.random(1))[0])
        jt = np.sort(open_uniform(rng, 2 * m) * t_len)
        signs = rng.permutation(np.repeat([1, -1], [m, m]))
        jumps.append((jt, signs))
    times, pts = _merge_coordinate_jumps(d, jumps)
    return RootedLoop("rw_continuous", d, float(t_len), times, pts)


def fill_continuous_cells(starts, duration, rate, deltas, rng):
    """Exact continuous-time walk paths inside cells with prescribed increments.

    Cell c spans [starts[c], starts[c] + duration) and its walk moves by
    ``deltas[c]``.  Returns jump times, signs and cell indices, sorted by cell
    and then by time.
    """
    starts = np.asarray(starts, dtype=float)
    deltas = np.asarray(deltas, dtype=np.int64)
    nu = np.abs(deltas)
    down_extra = sample_bessel_counts(np.full(len(starts), rate * duration), nu,
                                      rng.random(len(starts)))
    ups = down_extra + np.maximum(deltas, 0)
    total = 2 * down_extra + nu
    cell = np.repeat(np.arange(len(starts)), total)
    t = starts[cell] + duration * open_uniform(rng, len(cell))
    keys = rng.random(len(cell))
    offsets = np.concatenate([[0], np.cumsum(total)[:-1]])
    by_key = np.lexsort((keys, cell))
    rank = np.empty(len(cell), dtype=np.int64)
    rank[by_key] = np.arange(len(cell)) - offsets[cell[by_key]]
    signs = np.where(rank < ups[cell], 1, -1)
    by_time = np.lexsort((t, cell))
    return t[by_time], signs[by_time], cell[by_time]
