"""Rooted loops in three flavors, and their evaluation as curves.

``times``/``points`` conventions:

* ``brownian``: samples of a continuous path on a grid containing 0 and
  ``t_len``; evaluated by linear interpolation.
* ``rw_discrete``: the 2n+1 visited vertices at times 0..2n; evaluated by
  linear interpolation.
* ``rw_continuous``: ``times[0] = 0`` followed by the jump times, ``points[k]``
  the position after the k-th jump; evaluated as a right-continuous step path.
"""
from dataclasses import dataclass

import numpy as np

FLAVORS = ("brownian", "rw_discrete", "rw_continuous")


@dataclass
class RootedLoop:
    flavor: str
    d: int
    t_len: float
    times: np.ndarray
    points: np.ndarray
    levels: int | None = None

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown loop flavor {self.flavor!r}")
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points)
        if self.points.ndim == 1:
            self.points = self.points.reshape(-1, self.d)

    @property
    def root(self):
        return self.points[0]

    @property
    def is_step(self):
        return self.flavor == "rw_continuous"

    def translated(self, z):
        return RootedLoop(self.flavor, self.d, self.t_len, self.times,
                          self.points + np.asarray(z), self.levels)

    def rescaled(self, space=1.0, time=1.0):
        return RootedLoop(self.flavor, self.d, self.t_len * time, self.times * time,
                          self.points * float(space), self.levels)

    def validate(self):
        """Raise ``ValueError`` if a structural invariant fails."""
        pts = self.points
        if not np.array_equal(pts[0], pts[-1]):
            raise ValueError("loop does not end at its root")
        if self.flavor == "rw_discrete":
            if len(pts) != int(round(self.t_len)) + 1:
                raise ValueError("vertex count must equal t_len + 1")
            if np.any(np.abs(np.diff(pts, axis=0)).sum(axis=1) != 1):
                raise ValueError("consecutive vertices must be lattice neighbours")
        elif self.flavor == "rw_continuous":
            jt = self.times[1:]
            if len(jt) and (np.any(np.diff(jt) <= 0) or jt[0] <= 0 or jt[-1] >= self.t_len):
                raise ValueError("jump times must increase strictly inside (0, t_len)")
            steps = np.diff(pts, axis=0)
            if np.any(np.abs(steps).sum(axis=1) != 1):
                raise ValueError("every jump must be a unit lattice step")
            if np.any(steps.sum(axis=0) != 0):
                raise ValueError("up-jumps and down-jumps differ in some coordinate")
        else:
            if self.times[0] != 0 or self.times[-1] != self.t_len:
                raise ValueError("brownian grid must include 0 and t_len")
        return self


def evaluate_loop(loop, s, left=False):
    """Position at time s * t_len, s in [0, 1] (scalar or array).

    ``left=True`` gives left limits, which differ from values only at the
    jump times of a continuous-time walk.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any((s_arr < 0) | (s_arr > 1)):
        raise ValueError("s must lie in [0, 1]")
    t = s_arr * loop.t_len
    pts = loop.points
    if loop.is_step:
        side = "left" if left else "right"
        idx = np.searchsorted(loop.times, t, side=side) - 1
        out = pts[np.clip(idx, 0, len(pts) - 1)].astype(float)
        out[s_arr >= 1.0] = pts[-1]
        out[s_arr <= 0.0] = pts[0]
    else:
        out = np.column_stack([np.interp(t, loop.times, pts[:, i]) for i in range(loop.d)])
    return out[0] if np.ndim(s) == 0 else out


def sup_distance(loop_a, loop_b, extra_points=0):
    """sup_{0<=s<=1} |loop_a(s t_a) - loop_b(s t_b)| (Euclidean norm).

    Both curves are piecewise linear or piecewise constant, so the supremum is
    attained on the union of their breakpoints (using left limits at jumps).
    """
    s = np.union1d(loop_a.times / loop_a.t_len, loop_b.times / loop_b.t_len)
    if extra_points:
        # dyadic so that a larger request always refines a smaller one
        levels = int(np.ceil(np.log2(max(int(extra_points), 2))))
        s = np.union1d(s, np.linspace(0.0, 1.0, 2 ** levels + 1))
    s = np.clip(s, 0.0, 1.0)
    diff = evaluate_loop(loop_a, s) - evaluate_loop(loop_b, s)
    best = float(np.max(np.sqrt(np.sum(diff * diff, axis=1))))
    if loop_a.is_step or loop_b.is_step:
        diff = evaluate_loop(loop_a, s, left=True) - evaluate_loop(loop_b, s, left=True)
        best = max(best, float(np.max(np.sqrt(np.sum(diff * diff, axis=1)))))
    return best
