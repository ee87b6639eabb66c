"""The a_n sequences and the scaling / rounding maps between lattice and continuum.

a_n is defined through its tail form

    a_n^{-d/2} = (2 pi)^{d/2} (d/2) sum_{k >= n} mass(k),

which makes the Brownian loop measure of time lengths in [a_n, a_{n+1}]
equal to the random-walk cell mass ``mass(n)``.  Evaluating the tail sum
directly (instead of subtracting forward from a_1) keeps uniform relative
precision for large n.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PrecisionError
from .loops import RootedLoop
from .masses import MassModel, check_dim, check_variant, mass_model


def mass_scale(d):
    """(2 pi)^{d/2} (d/2)."""
    return (2.0 * math.pi) ** (d / 2.0) * (d / 2.0)


@dataclass(frozen=True)
class ASequence:
    d: int
    variant: str
    n_max: int
    a: np.ndarray  # a[i] = a_{i+1}, i = 0..n_max (one extra so every cell has a right end)
    partial_sums: np.ndarray  # (2 pi)^{d/2} (d/2) mass(n), n = 1..n_max
    identity_residual: np.ndarray  # |mass(n) - brownian mass of [a_n, a_{n+1}]|
    tail_constant: float
    model: MassModel = field(repr=False, compare=False)

    def a_at(self, n):
        """a_n for arbitrary integer n >= 1 (table lookup or direct tail evaluation)."""
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
        out = np.empty(n_arr.shape)
        inside = n_arr <= self.n_max + 1
        out[inside] = self.a[n_arr[inside] - 1]
        if (~inside).any():
            out[~inside] = _a_from_tail(self.d, self.model.tail(n_arr[~inside]))
        return float(out[0]) if np.ndim(n) == 0 else out

    def cell_ratio(self, n):
        """mass(n) / tail(n) = 1 - (a_n / a_{n+1})^{d/2}, computed without cancellation."""
        return self.model.mass(n) / self.model.tail(n)

    def increments(self):
        """a_{n+1} - a_n for n = 1..n_max, from the cell ratios."""
        ns = np.arange(1, self.n_max + 1)
        r = self.cell_ratio(ns)
        return self.a[:-1] * np.expm1(-(2.0 / self.d) * np.log1p(-r))

    def offsets(self):
        """a_n - 2n/d for n = 1..n_max+1."""
        ns = np.arange(1, self.n_max + 2)
        return self.a - 2.0 * ns / self.d


def _a_from_tail(d, tail):
    return (mass_scale(d) * np.asarray(tail)) ** (-2.0 / d)


def brownian_cell_mass(d, lo, hi):
    """(2 pi)^{-d/2} int_lo^hi s^{-d/2-1} ds in closed form."""
    h = d / 2.0
    return (2.0 * math.pi) ** (-h) * (np.asarray(lo, float) ** -h - np.asarray(hi, float) ** -h) / h


def build_a_sequence(d, variant, n_max, probe_max=1e9):
    """Tabulate a_1..a_{n_max+1} for the given dimension and walk variant.

    ``tail_constant`` is sup_n |a_n - 2n/d| over the table and over a
    logarithmic probe of n up to ``probe_max`` (the offsets converge, so the
    probe captures the supremum over all cells).
    """
    check_dim(d)
    check_variant(variant)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    model = mass_model(int(d), variant)
    ns = np.arange(1, n_max + 2)
    tail, err = model._tail_and_err(ns)
    if tail[-1] < 10.0 * err[-1]:
        raise PrecisionError(f"a_n tail sum unresolved at n_max={n_max}")
    a = _a_from_tail(d, tail)
    masses = model.mass(ns[:-1])
    partial = mass_scale(d) * masses
    residual = np.abs(masses - brownian_cell_mass(d, a[:-1], a[1:]))
    probe = np.unique(np.geomspace(n_max + 2, max(probe_max, n_max + 3), 200).astype(np.int64))
    probe_off = _a_from_tail(d, model.tail(probe)) - 2.0 * probe / d
    tc = max(float(np.max(np.abs(a - 2.0 * ns / d))), float(np.max(np.abs(probe_off))))
    return ASequence(int(d), variant, int(n_max), a, partial, residual, tc, model)


# --------------------------------------------------------------------------
# rounding maps
# --------------------------------------------------------------------------

def chi_N(t, N, seq):
    """Time rounding for Brownian loops: the cell-time 2k/(d N^2) where
    a_k / N^2 <= t < a_{k+1} / N^2, or ``None`` below a_1 / N^2.

    For d = 2 the cell-time is k / N^2.  The factor 2/d places the rounded time
    on the scale of the rescaled lattice loop of cell k (time length 2k / (d N^2)).
    """
    if t <= 0:
        raise ValueError("chi_N requires t > 0")
    k = chi_cell(t, N, seq)
    if k is None:
        return None
    return 2.0 * k / (seq.d * N * N)


def chi_cell(t, N, seq):
    """Cell index k with a_k <= t N^2 < a_{k+1}, or ``None`` below a_1."""
    x = t * N * N
    if x < seq.a[0]:
        return None
    if x < seq.a[-1]:
        return int(np.searchsorted(seq.a, x, side="right"))
    lo, hi = seq.n_max + 1, 2 * (seq.n_max + 1)
    while seq.a_at(hi) <= x:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if seq.a_at(mid) <= x:
            lo = mid
        else:
            hi = mid
    return lo


def varphi_N(t, N):
    """Original time rounding k/N^2 on cells [(k - 3/8)/N^2, (k + 5/8)/N^2); ``None`` below 5/8."""
    x = t * N * N
    if x < 5.0 / 8.0:
        return None
    return math.floor(x + 3.0 / 8.0) / (N * N)


def psi_N(z, N):
    """Nearest lattice point (scaled by 1/N) of N z, on cubes (z0 - 1/2, z0 + 1/2].

    Half-integers round toward -infinity.
    """
    z = np.asarray(z, dtype=float)
    return np.ceil(N * z - 0.5) / N


def psi_site(z, N):
    """Integer site z0 with N z in the cube (z0 - 1/2, z0 + 1/2]."""
    return np.ceil(N * np.asarray(z, dtype=float) - 0.5).astype(np.int64)


def scale_brownian_loop(loop, N):
    """Brownian scaling: space by 1/N, time by 1/N^2."""
    return loop.rescaled(space=1.0 / N, time=1.0 / N ** 2)


def scale_rw_loop(loop, N, d=None):
    """Lattice scaling: space by 1/N, time by 1/(d N^2)."""
    d = loop.d if d is None else d
    return loop.rescaled(space=1.0 / N, time=1.0 / (d * N ** 2))


__all__ = [
    "ASequence", "RootedLoop", "build_a_sequence", "brownian_cell_mass", "chi_N", "chi_cell",
    "mass_scale", "psi_N", "psi_site", "scale_brownian_loop", "scale_rw_loop", "varphi_N",
]
