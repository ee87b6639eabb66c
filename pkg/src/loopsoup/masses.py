"""Lattice heat kernels and loop-measure masses.

Two random-walk loop measures on Z^d are supported:

* ``discrete``: every rooted loop of length 2n gets weight (2n)^{-1} (2d)^{-2n};
  the mass of loops of length 2n rooted at a fixed site is
  ``q_discrete(d, n) = P(S_{2n} = 0) / (2n)``.
* ``continuous``: the rate-1 continuous-time walk, with loop-length density
  ``q_continuous(d, t) = p_t(0, 0) / t`` and cell masses
  ``Q_continuous(d, n) = int_{2n}^{2n+2} q_continuous(d, t) dt``.

:class:`MassModel` bundles the per-cell masses and their tail sums
``sum_{k >= n} mass(k)`` for one ``(d, variant)``; the tail sums drive the
a_n sequence and the Poisson field sampler.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import bernoulli, zeta
from scipy.stats import binom

from .errors import PrecisionError

VARIANTS = ("discrete", "continuous")

SERIES_CUTOFF = 15.0
# quadrature below this time, asymptotic series of the tail integral above
TAIL_SPLIT = 1.0e4
N_ASYMPTOTIC_TERMS = 12
DISCRETE_TABLE = 2 ** 17

_GL_X, _GL_W = leggauss(20)


def check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def check_dim(d):
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be an integer >= 1, got {d!r}")


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


# --------------------------------------------------------------------------
# Bessel function and heat kernel
# --------------------------------------------------------------------------

def i0e(x):
    """Exponentially scaled modified Bessel function exp(-x) I_0(x), x >= 0.

    Power series up to x = 15, asymptotic expansion (30 terms, all decreasing
    for x > 15) beyond.  Relative error below 2e-14 everywhere.
    """
    x_in = x
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0):
        raise ValueError("i0e requires x >= 0")
    out = np.empty_like(x)
    small = x <= SERIES_CUTOFF
    if small.any():
        xs = x[small]
        q = xs * xs / 4.0
        term = np.ones_like(xs)
        total = np.ones_like(xs)
        for k in range(1, 120):
            term = term * q / (k * k)
            total += term
            if np.all(term <= 1e-17 * total):
                break
        out[small] = total * np.exp(-xs)
    big = ~small
    if big.any():
        xb = x[big]
        term = np.ones_like(xb)
        total = np.ones_like(xb)
        for k in range(1, 30):
            term = term * (2 * k - 1) ** 2 / (8.0 * k * xb)
            total += term
        out[big] = total / np.sqrt(2.0 * np.pi * xb)
    return _scalar_or_array(out[0], x_in) if np.ndim(x_in) == 0 else out


def heat_kernel_return(d, t):
    """p_t(0,0) for the rate-1 continuous-time simple random walk on Z^d.

    Coordinates move independently at rate 1/d, so p_t(0,0) = (e^{-t/d} I_0(t/d))^d.
    """
    check_dim(d)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("heat_kernel_return requires finite t >= 0")
    val = np.exp(d * np.log(i0e(t_arr / d)))
    return float(val) if np.ndim(t) == 0 else val


def q_continuous(d, t):
    """Loop-length density q_d(t) = p_t(0,0)/t of the continuous-time loop measure."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("q_continuous requires t > 0")
    val = heat_kernel_return(d, t_arr) / t_arr
    return float(val) if np.ndim(t) == 0 else val


def _gl(d, lo, hi):
    """20-point Gauss-Legendre integral of q_d over [lo, hi] (arrays)."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = (hi - lo) / 2.0
    t = lo + half * (_GL_X + 1.0)
    return (half[..., 0]) * np.sum(_GL_W * q_continuous(d, t), axis=-1)


def Q_continuous(d, n, tol=1e-13, max_depth=30):
    """Cell mass int_{2n}^{2n+2} q_d(t) dt and an error estimate.

    Adaptive bisection of Gauss-Legendre panels; a panel is accepted once its
    one-panel and two-panel values agree to ``tol`` relative (or 1e-300 absolute).
    Returns ``(value, abs_err)``.
    """
    check_dim(d)
    if int(n) != n or n < 1:
        raise ValueError("Q_continuous requires an integer n >= 1")
    total, err = 0.0, 0.0
    stack = [(2.0 * n, 2.0 * n + 2.0, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        whole = float(_gl(d, lo, hi))
        halves = float(_gl(d, lo, mid)) + float(_gl(d, mid, hi))
        e = abs(whole - halves)
        if e <= max(tol * abs(halves), 1e-300) or depth >= max_depth:
            total += halves
            err += e
        else:
            stack.append((lo, mid, depth + 1))
            stack.append((mid, hi, depth + 1))
    return total, err


def Q_continuous_table(d, ns):
    """Vectorized cell masses for an array of n, with per-cell error estimates."""
    ns = np.asarray(ns, dtype=float)
    lo, hi = 2.0 * ns, 2.0 * ns + 2.0
    mid = 2.0 * ns + 1.0
    whole = _gl(d, lo, hi)
    halves = _gl(d, lo, mid) + _gl(d, mid, hi)
    return halves, np.abs(whole - halves)


def cdf_within_cell(d, n, t):
    """Unnormalized int_{2n}^{t} q_d for t in [2n, 2n+2] (arrays broadcast)."""
    return _gl(d, 2.0 * np.asarray(n, dtype=float), t)


@lru_cache(maxsize=None)
def _tail_series_coefficients(d, terms=N_ASYMPTOTIC_TERMS):
    # e^{-s} I_0(s) ~ (2 pi s)^{-1/2} sum_k alpha_k s^{-k}
    alpha = [1.0]
    for k in range(1, terms):
        alpha.append(alpha[-1] * (2 * k - 1) ** 2 / (8.0 * k))
    coef = np.array([1.0] + [0.0] * (terms - 1))
    base = np.array(alpha)
    for _ in range(d):
        coef = np.convolve(coef, base)[:terms]
    return coef


def continuous_tail_series(d, x):
    """int_x^infinity q_d(t) dt from the asymptotic expansion (valid for large x).

    Returns ``(value, remainder_estimate)``.
    """
    x = np.asarray(x, dtype=float)
    e = _tail_series_coefficients(d)
    h = d / 2.0
    terms = np.stack([e[j] * d ** j * x ** (-h - j) / (h + j) for j in range(len(e))])
    pref = (2.0 * np.pi / d) ** (-h)
    return pref * terms.sum(axis=0), pref * np.abs(terms[-1])


# --------------------------------------------------------------------------
# Discrete-time return probabilities
# --------------------------------------------------------------------------

_SMALL_CENTRAL = 64


@lru_cache(maxsize=1)
def _small_central_table():
    c = np.empty(_SMALL_CENTRAL)
    c[0] = 1.0
    for k in range(1, _SMALL_CENTRAL):
        c[k] = c[k - 1] * (2 * k - 1) / (2 * k)
    return c


@lru_cache(maxsize=1)
def _stirling_difference_coefficients():
    # log Gamma(n+1/2) - log Gamma(n+1) = -log(n)/2 + sum_k c_k n^{-k}
    b = bernoulli(22)
    return [(k, (2.0 ** -k - 2.0) * b[k + 1] / (k * (k + 1))) for k in range(1, 20, 2)]


def central_binomial_prob(n):
    """4^{-n} C(2n, n) = P(S_{2n} = 0) for one-dimensional simple random walk."""
    n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
    out = np.empty(n_arr.shape, dtype=float)
    small = n_arr < _SMALL_CENTRAL
    out[small] = _small_central_table()[n_arr[small]]
    if (~small).any():
        nb = n_arr[~small].astype(float)
        log_ratio = -0.5 * np.log(nb)
        for k, c in _stirling_difference_coefficients():
            log_ratio = log_ratio + c * nb ** (-k)
        out[~small] = np.exp(log_ratio) / math.sqrt(math.pi)
    return float(out[0]) if np.ndim(n) == 0 else out


def _split_probs(e, m):
    """P(2k of 2m steps go to one given coordinate out of e), k = 0..m."""
    ks = np.arange(m + 1)
    return binom.pmf(2 * ks, 2 * m, 1.0 / e)


def _return_table_by_splitting(d, n_max):
    # P_e(2m) = sum_k P(coordinate e takes 2k steps) P_1(2k) P_{e-1}(2m - 2k)
    c = central_binomial_prob(np.arange(n_max + 1))
    table = c.copy()
    for e in range(2, d + 1):
        new = np.empty(n_max + 1)
        for m in range(n_max + 1):
            new[m] = math.fsum(_split_probs(e, m) * c[: m + 1] * table[m::-1])
        table = new
    return table


def return_prob_discrete(d, steps):
    """P(S_steps = 0) for discrete-time simple random walk on Z^d.

    Dynamic programme over coordinate step counts: the steps taken by the
    last coordinate are binomial, that coordinate must return (probability
    4^{-k} C(2k, k)), and the rest is the (d-1)-dimensional problem.  All terms
    stay in [0, 1]; sums are compensated.  Odd step counts return 0.
    """
    check_dim(d)
    if int(steps) != steps or steps < 0:
        raise ValueError("steps must be a non-negative integer")
    steps = int(steps)
    if steps % 2:
        return 0.0
    n = steps // 2
    if n == 0:
        return 1.0
    c = central_binomial_prob(np.arange(n + 1))
    if d == 1:
        return float(c[n])
    rest = _return_table_by_splitting(d - 1, n)
    return math.fsum(_split_probs(d, n) * c * rest[::-1])


def _return_prob_3d_table(n_max):
    # closed walks on Z^3: n^3 a_n = 2(2n-1)(10n^2-10n+3) a_{n-1} - 36(n-1)(2n-1)(2n-3) a_{n-2},
    # divided through by 36^n; forward iteration follows the dominant solution
    u = np.empty(n_max + 1)
    u[0] = 1.0
    if n_max >= 1:
        u[1] = 1.0 / 6.0
    for n in range(2, n_max + 1):
        u[n] = (2.0 * (2 * n - 1) * (10.0 * n * n - 10 * n + 3) / 36.0 * u[n - 1]
                - (n - 1) * (2 * n - 1) * (2 * n - 3) / 36.0 * u[n - 2]) / float(n) ** 3
    return u


def return_prob_table(d, n_max):
    """Array of P(S_{2n} = 0) for n = 0..n_max."""
    check_dim(d)
    ns = np.arange(n_max + 1)
    if d == 1:
        return central_binomial_prob(ns)
    if d == 2:
        return central_binomial_prob(ns) ** 2
    if d == 3:
        return _return_prob_3d_table(n_max)
    return _return_table_by_splitting(d, n_max)


def q_discrete(d, n):
    """Mass of discrete-time loops of length 2n rooted at a fixed site."""
    check_dim(d)
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("q_discrete requires n >= 1")
    if d == 1:
        val = central_binomial_prob(n_arr) / (2.0 * n_arr)
    elif d == 2:
        val = central_binomial_prob(n_arr) ** 2 / (2.0 * n_arr)
    elif n_arr.ndim == 0:
        val = return_prob_discrete(d, 2 * int(n_arr)) / (2.0 * int(n_arr))
    else:
        table = return_prob_table(d, int(n_arr.max()))
        val = table[n_arr] / (2.0 * n_arr)
    return float(val) if np.ndim(n) == 0 else val


def discrete_leading(d, n):
    """Leading asymptotic (2n)^{-1} * 2 (d / (4 pi n))^{d/2} of q_discrete."""
    n = np.asarray(n, dtype=float)
    return (d / (4.0 * np.pi * n)) ** (d / 2.0) / n


def continuous_leading(d, t):
    """Leading asymptotic (d/2)^{d/2} pi^{-d/2} t^{-d/2-1} of q_continuous."""
    t = np.asarray(t, dtype=float)
    return (d / 2.0) ** (d / 2.0) * np.pi ** (-d / 2.0) * t ** (-d / 2.0 - 1.0)


# --------------------------------------------------------------------------
# Mass tables and tail sums
# --------------------------------------------------------------------------

@dataclass
class MassTable:
    d: int
    variant: str
    n_max: int
    entries: np.ndarray  # entries[i] is the mass of cell n = i + 1
    abs_err: np.ndarray

    @property
    def n(self):
        return np.arange(1, self.n_max + 1)


def build_mass_table(d, variant, n_max):
    check_dim(d)
    check_variant(variant)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    ns = np.arange(1, n_max + 1)
    if variant == "continuous":
        vals, errs = Q_continuous_table(d, ns)
        errs = np.maximum(errs, 4 * np.finfo(float).eps * vals)
    else:
        vals = q_discrete(d, ns)
        errs = 8 * np.finfo(float).eps * np.sqrt(ns) * vals
    return MassTable(d, variant, n_max, vals, errs)


class MassModel:
    """Cell masses and tail sums sum_{k>=n} mass(k) for one (d, variant).

    Tail sums are exact suffix sums over a table, closed by an asymptotic
    expansion beyond it:

    * continuous: the table covers 2n < TAIL_SPLIT; beyond that the tail
      integral is the term-by-term integral of the expansion of p_t(0,0).
    * discrete: exact masses up to ``n_table``; beyond, the three-term expansion
      (2n)^{-1} 2 (d/(4 pi n))^{d/2} (1 - d/(8n) + c2/n^2) summed with Hurwitz
      zeta functions, c2 fitted from the exact table end.
    """

    def __init__(self, d, variant, n_table=None):
        check_dim(d)
        check_variant(variant)
        self.d = int(d)
        self.variant = variant
        if variant == "continuous":
            self.n_table = int(TAIL_SPLIT // 2) if n_table is None else int(n_table)
            ns = np.arange(1, self.n_table + 1)
            self._mass, self._mass_err = Q_continuous_table(d, ns)
            closure, closure_err = continuous_tail_series(d, 2.0 * (self.n_table + 1))
            self.c2 = None
        else:
            default = DISCRETE_TABLE if d <= 3 else 2048
            self.n_table = default if n_table is None else int(n_table)
            ns = np.arange(1, self.n_table + 1)
            u = return_prob_table(d, self.n_table)
            self._mass = u[1:] / (2.0 * ns)
            self._mass_err = 8 * np.finfo(float).eps * np.sqrt(ns) * self._mass
            K = self.n_table
            ratio = u[K] / (2.0 * (d / (4.0 * np.pi * K)) ** (d / 2.0))
            self.c2 = float(K * K * (ratio - 1.0 + d / (8.0 * K)))
            closure, closure_err = self._discrete_closure(K + 1)
        suffix = np.cumsum(self._mass[::-1])[::-1]
        self._tail = np.append(suffix + closure, closure)  # tail(n) for n = 1..n_table+1
        err_suffix = np.cumsum(self._mass_err[::-1])[::-1]
        round_err = 4 * np.finfo(float).eps * np.arange(self.n_table + 1, 0, -1) * self._tail
        self._tail_err = np.append(err_suffix + closure_err, closure_err) + round_err

    def _discrete_closure(self, m):
        d = self.d
        h = d / 2.0
        m = np.asarray(m, dtype=float)
        pref = (d / (4.0 * np.pi)) ** h
        t0 = zeta(h + 1.0, m)
        t1 = -(d / 8.0) * zeta(h + 2.0, m)
        t2 = self.c2 * zeta(h + 3.0, m)
        # the fitted c2 is off by O(1/K); next order is O(n^{-3}) relative
        err = pref * (abs(self.c2) / self.n_table + 1.0) * zeta(h + 4.0, m) * 10.0
        return pref * (t0 + t1 + t2), err

    def _mass_beyond(self, n):
        n = np.asarray(n, dtype=float)
        if self.variant == "continuous":
            return Q_continuous_table(self.d, n)[0]
        if self.d <= 2:
            return q_discrete(self.d, n.astype(np.int64))
        return discrete_leading(self.d, n) * (1.0 - self.d / (8.0 * n) + self.c2 / n ** 2)

    def mass(self, n):
        """Cell mass for integer n >= 1 (array or scalar)."""
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n_arr < 1):
            raise ValueError("cell index must be >= 1")
        out = np.empty(n_arr.shape)
        inside = n_arr <= self.n_table
        out[inside] = self._mass[n_arr[inside] - 1]
        if (~inside).any():
            out[~inside] = self._mass_beyond(n_arr[~inside])
        return float(out[0]) if np.ndim(n) == 0 else out

    def tail(self, n):
        """sum_{k >= n} mass(k) for integer n >= 1."""
        return self._tail_and_err(n)[0]

    def tail_err(self, n):
        return self._tail_and_err(n)[1]

    def _tail_and_err(self, n):
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n_arr < 1):
            raise ValueError("cell index must be >= 1")
        val = np.empty(n_arr.shape)
        err = np.empty(n_arr.shape)
        inside = n_arr <= self.n_table + 1
        val[inside] = self._tail[n_arr[inside] - 1]
        err[inside] = self._tail_err[n_arr[inside] - 1]
        if (~inside).any():
            m = n_arr[~inside].astype(float)
            if self.variant == "continuous":
                v, e = continuous_tail_series(self.d, 2.0 * m)
            else:
                v, e = self._discrete_closure(m)
            val[~inside] = v
            err[~inside] = e + 4 * np.finfo(float).eps * v
        if np.any(val < 10 * err):
            raise PrecisionError("tail mass not resolvable at the requested cell index")
        if np.ndim(n) == 0:
            return float(val[0]), float(err[0])
        return val, err

    def inverse_tail(self, target, n_lo, n_hi):
        """Largest n in [n_lo, n_hi] with tail(n) >= target (vectorized bisection)."""
        target = np.asarray(target, dtype=float)
        lo = np.full(target.shape, int(n_lo), dtype=np.int64)
        hi = np.full(target.shape, int(n_hi), dtype=np.int64)
        while np.any(lo < hi):
            mid = (lo + hi + 1) // 2
            ok = self.tail(mid) >= target
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid - 1)
        return lo


@lru_cache(maxsize=None)
def mass_model(d, variant):
    return MassModel(d, variant)


def asymptotic_residual(d, variant, n_range):
    """Table of (n, residual) with residual = mass/leading - (1 + first correction).

    discrete: leading (2n)^{-1} 2 (d/(4 pi n))^{d/2}, correction -d/(8n).
    continuous: leading and first correction d^2/(8t) of q_d integrated over
    the cell [2n, 2n+2].
    """
    ns = np.asarray(list(n_range), dtype=np.int64)
    if ns.size == 0:
        raise ValueError("n_range must be nonempty")
    check_variant(variant)
    if variant == "discrete":
        res = q_discrete(d, ns) / discrete_leading(d, ns) - (1.0 - d / (8.0 * ns))
    else:
        h = d / 2.0
        lo, hi = 2.0 * ns, 2.0 * ns + 2.0
        c = (d / 2.0) ** h * np.pi ** (-h)
        lead = c * (lo ** -h - hi ** -h) / h
        corr = c * (d * d / 8.0) * (lo ** (-h - 1) - hi ** (-h - 1)) / (h + 1)
        res = Q_continuous_table(d, ns)[0] / lead - (1.0 + corr / lead)
    return np.column_stack([ns.astype(float), res])
