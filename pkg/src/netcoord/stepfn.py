"""Algebra of monotone right-continuous step functions on [0, 1].

A step function P holds a value v_k on the half-open interval
[x_k, x_{k+1}) and its last value on the closed tail up to and
including 1.  Values are weakly increasing, so P behaves like a
(sub)distribution function:

    P(x)      -- right-continuous evaluation,
    P^{-1}(y) = inf{x : P(x) >= y}  (generalized inverse, +inf when
                the set is empty, i.e. y > P(1)).

On top of evaluation the module provides the exact piecewise-quadratic
integral

    ru_objective(P, x) = int_0^x (y - P^{-1}(y)) dy,

its global maximizers (``ru_dominant``), fixed points of P, a local
stability test, the loss integral relative to a reference point, and
staircase approximation of arbitrary monotone functions.

Where P^{-1}(y) = +inf (y above P(1)) the integrand is clamped at the
sentinel ``INV_SENTINEL = 2.0``: the clamped integrand is <= -1 there,
so no maximizer can lie beyond P(1) and arithmetic stays finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "INV_SENTINEL",
    "TOL_X",
    "StepFn",
    "FixedPoint",
    "ru_objective",
    "ru_dominant",
    "fixed_points",
    "is_strongly_stable",
    "loss_L",
    "step_approximate",
]

# Sentinel standing in for +inf when integrating P^{-1}.
INV_SENTINEL = 2.0

# Two maximizers closer than this count as one.
TOL_X = 1e-9

# Objective values within this of the maximum count as tied.
_VALUE_TIE = 1e-12


_DOMAIN_EPS = 1e-9  # fp dust from incremental neighborhood updates


def _check_unit(name: str, x: float) -> float:
    x = float(x)
    if not (-_DOMAIN_EPS <= x <= 1.0 + _DOMAIN_EPS):
        raise ValueError(f"{name}={x} outside [0, 1]")
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class StepFn:
    """Monotone right-continuous step function on [0, 1].

    ``base`` is the value on [0, x_1); ``steps`` is a sequence of
    (x_k, v_k) pairs, x_k strictly increasing in (0, 1], meaning the
    function takes value v_k on [x_k, x_{k+1}).  Evaluation at 1 is
    defined and equals the last value.  A step at x=0 overrides base.

    Instances are immutable and safe to share across workers.
    """

    base: float
    steps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        steps = tuple((float(x), float(v)) for x, v in self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "base", float(self.base))
        xs = [x for x, _ in steps]
        if any(b >= a for a, b in zip(xs[1:], xs)):
            raise ValueError("step breakpoints must be strictly increasing")
        if xs and (xs[0] < 0.0 or xs[-1] > 1.0):
            raise ValueError("step breakpoints must lie in [0, 1]")
        values = [v for _, v in steps]
        chain = ([self.base] if not xs or xs[0] > 0.0 else []) + values
        if any(b > a for a, b in zip(chain[1:], chain)):
            raise ValueError("step values must be weakly increasing")
        if any(not (0.0 <= v <= 1.0) for v in chain):
            raise ValueError("step values must lie in [0, 1]")
        # Internal arrays: piece j has value _vals[j] on [_pos[j], _pos[j+1]).
        if xs and xs[0] == 0.0:
            pos = np.asarray(xs, dtype=float)
            vals = np.asarray(values, dtype=float)
        else:
            pos = np.asarray([0.0] + xs, dtype=float)
            vals = np.asarray([self.base] + values, dtype=float)
        object.__setattr__(self, "_pos", pos)
        object.__setattr__(self, "_vals", vals)
        object.__setattr__(self, "_knots", pos[1:])

    # -- construction helpers -------------------------------------------

    @classmethod
    def constant(cls, c: float) -> "StepFn":
        return cls(base=c)

    @classmethod
    def from_grid(cls, positions: Sequence[float], values: Sequence[float]) -> "StepFn":
        """Build from piece start positions (first must be 0) and values."""
        positions = list(map(float, positions))
        values = list(map(float, values))
        if not positions or positions[0] != 0.0:
            raise ValueError("first position must be 0")
        return cls(base=values[0], steps=tuple(zip(positions[1:], values[1:])))

    # -- evaluation ------------------------------------------------------

    def eval(self, x: float) -> float:
        """Right-continuous value at x in [0, 1]."""
        x = _check_unit("x", x)
        idx = int(np.searchsorted(self._knots, x, side="right"))
        return float(self._vals[idx])

    __call__ = eval

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < -_DOMAIN_EPS or x.max() > 1.0 + _DOMAIN_EPS):
            raise ValueError("x outside [0, 1]")
        x = np.clip(x, 0.0, 1.0)
        idx = np.searchsorted(self._knots, x, side="right")
        return self._vals[idx]

    def eval_left(self, x: float) -> float:
        """Left limit P(x-); equals P(0) at x = 0."""
        x = _check_unit("x", x)
        idx = int(np.searchsorted(self._knots, x, side="left"))
        return float(self._vals[idx])

    def inverse(self, y: float) -> float:
        """Generalized inverse inf{x : P(x) >= y}; +inf if empty."""
        y = _check_unit("y", y)
        idx = int(np.searchsorted(self._vals, y, side="left"))
        if idx >= len(self._vals):
            return math.inf
        return float(self._pos[idx])

    def inverse_array(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.size and (y.min() < -_DOMAIN_EPS or y.max() > 1.0 + _DOMAIN_EPS):
            raise ValueError("y outside [0, 1]")
        y = np.clip(y, 0.0, 1.0)
        idx = np.searchsorted(self._vals, y, side="left")
        pos = np.append(self._pos, np.inf)
        return pos[idx]

    # -- structure accessors ----------------------------------------------

    @property
    def piece_positions(self) -> np.ndarray:
        """Start position of each piece (first is 0)."""
        return self._pos.copy()

    @property
    def piece_values(self) -> np.ndarray:
        return self._vals.copy()

    @property
    def top(self) -> float:
        """P(1), the largest value."""
        return float(self._vals[-1])

    def shift_values(self, delta: float) -> "StepFn":
        """Pointwise P + delta, clipped to [0, 1]."""
        vals = np.clip(self._vals + delta, 0.0, 1.0)
        return StepFn.from_grid(self._pos.tolist(), vals.tolist())

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {"base": self.base, "steps": [[x, v] for x, v in self.steps]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StepFn":
        return cls(base=doc["base"], steps=tuple((x, v) for x, v in doc.get("steps", [])))

    @classmethod
    def from_json(cls, text: str) -> "StepFn":
        return cls.from_json_dict(json.loads(text))


# -- generalized-inverse segments ------------------------------------------


def _inverse_segments(P: StepFn) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segments of y on which P^{-1} is constant.

    Returns (lo, hi, c): P^{-1}(y) = c_j for y in (lo_j, hi_j], covering
    [0, 1] with the sentinel on (P(1), 1].  Zero-length segments from
    repeated values are kept (their integral contribution is zero).
    """
    vals = P._vals
    pos = P._pos
    lo = np.concatenate(([0.0], vals))
    hi = np.concatenate((vals, [1.0]))
    c = np.concatenate((pos, [INV_SENTINEL]))
    # For y in [0, vals[0]] the inverse is 0; splitting it off as its own
    # segment keeps the convention lo_0 = 0 exact.
    keep = hi >= lo
    return lo[keep], hi[keep], c[keep]


def ru_objective(P: StepFn, x: float) -> float:
    """Exact value of int_0^x (y - P^{-1}(y)) dy.

    P^{-1} is clamped at INV_SENTINEL above P(1); the integral is a
    finite sum of quadratic-minus-linear pieces, no quadrature.
    """
    x = _check_unit("x", x)
    lo, hi, c = _inverse_segments(P)
    a = np.minimum(np.maximum(lo, 0.0), x)
    b = np.minimum(hi, x)
    m = b > a
    return float(np.sum(0.5 * (b[m] ** 2 - a[m] ** 2) - c[m] * (b[m] - a[m])))


def _objective_candidates(P: StepFn) -> np.ndarray:
    """Candidate maximizer locations: 0, 1, segment boundaries, vertices."""
    lo, hi, c = _inverse_segments(P)
    pts = [0.0, 1.0]
    pts.extend(v for v in lo if 0.0 <= v <= 1.0)
    pts.extend(v for v in hi if 0.0 <= v <= 1.0)
    # Per-piece vertex of the quadratic (derivative y - c = 0); the pieces
    # are convex so vertices are interior minima, kept only for symmetry
    # with minimum-finding uses.
    for a, b, cc in zip(lo, hi, c):
        if a < cc < b:
            pts.append(float(cc))
    return np.unique(np.asarray(pts, dtype=float))


def ru_dominant(P: StepFn) -> tuple[list[float], bool]:
    """Global maximizers of ru_objective over [0, 1] and a strictness flag.

    The objective is piecewise quadratic and convex on each piece, so the
    maximum is attained on the candidate grid.  Maximizers closer than
    TOL_X are merged; ``strict`` is True iff a single point remains.
    """
    cand = _objective_candidates(P)
    vals = np.asarray([ru_objective(P, float(t)) for t in cand])
    best = vals.max()
    winners = np.sort(cand[vals >= best - _VALUE_TIE])
    merged = [float(winners[0])]
    for w in winners[1:]:
        if w - merged[-1] > TOL_X:
            merged.append(float(w))
    return merged, len(merged) == 1


@dataclass(frozen=True)
class FixedPoint:
    x: float
    kind: str  # "exact" or "jump-crossing"


def fixed_points(P: StepFn) -> list[FixedPoint]:
    """All x with P(x) = x, plus markers where P jumps over the diagonal.

    Exact points are values v_k lying inside their own plateau; crossing
    markers are breakpoints x with P(x-) < x <= P(x).  The list is sorted
    and always nonempty (a monotone self-map of [0, 1] admits one).
    """
    pos = P._pos
    vals = P._vals
    out: list[FixedPoint] = []
    n = len(vals)
    for j in range(n):
        left = pos[j]
        right = pos[j + 1] if j + 1 < n else 1.0
        v = vals[j]
        inside = (left <= v < right) or (j == n - 1 and left <= v <= 1.0)
        if inside:
            out.append(FixedPoint(float(v), "exact"))
    for j in range(1, n):
        x = pos[j]
        if vals[j - 1] < x <= vals[j]:
            out.append(FixedPoint(float(x), "jump-crossing"))
    out.sort(key=lambda f: f.x)
    # Merge duplicates (an exact point sitting exactly on a breakpoint).
    dedup: list[FixedPoint] = []
    for f in out:
        if dedup and abs(f.x - dedup[-1].x) <= TOL_X:
            continue
        dedup.append(f)
    if not dedup:
        raise AssertionError("monotone step function without fixed point")
    return dedup


def is_strongly_stable(P: StepFn, x: float, gamma: float, radius: float) -> bool:
    """Local stability of a fixed point: one-sided slope bounds gamma < 1.

    True iff for all y in [x-radius, x+radius] cap [0,1]:
    y <= x implies P(y) >= P(x) + gamma (y - x) and
    y >= x implies P(y) <= P(x) + gamma (y - x).
    Checked exactly at piece boundaries (sufficient for step functions).
    """
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must lie in [0, 1)")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    x = _check_unit("x", x)
    if min(abs(x - f.x) for f in fixed_points(P)) > TOL_X:
        raise ValueError(f"x={x} is not a fixed point of P")
    px = P.eval(x)
    lo_lim = max(0.0, x - radius)
    hi_lim = min(1.0, x + radius)
    pos = P._pos
    vals = P._vals
    n = len(vals)
    for j in range(n):
        a = float(pos[j])
        b = float(pos[j + 1]) if j + 1 < n else 1.0
        v = float(vals[j])
        # Left branch on this piece: y in [max(a, lo_lim), min(b, x)),
        # constraint v >= px + gamma (y - x); worst as y -> sup.
        y_lo = max(a, lo_lim)
        y_sup = min(b, x)
        if y_lo < y_sup and v < px + gamma * (y_sup - x) - 1e-15:
            return False
        # Right branch: y in [max(a, x), min(b, hi_lim)) plus the closed
        # point y = 1 on the last piece; constraint v <= px + gamma (y - x),
        # worst at the attained infimum.
        y_inf = max(a, x)
        y_hi = min(b, hi_lim) if j + 1 < n else min(b, hi_lim) + 1e-300
        if y_inf < y_hi or (j + 1 == n and y_inf <= hi_lim):
            if y_inf <= hi_lim and v > px + gamma * (y_inf - x) + 1e-15:
                return False
    return True


def loss_L(P: StepFn, x_star: float, x: float) -> float:
    """Exact value of int_{x_star}^{x} (P^{-1}(y) - y) dy.

    Uses the same sentinel clamp as ru_objective.  Satisfies the identity
    loss_L(P, x*, x) = ru_objective(P, x*) - ru_objective(P, x).
    """
    x = _check_unit("x", x)
    x_star = _check_unit("x_star", x_star)
    sign = 1.0
    a0, b0 = x_star, x
    if a0 > b0:
        a0, b0 = b0, a0
        sign = -1.0
    lo, hi, c = _inverse_segments(P)
    a = np.minimum(np.maximum(lo, a0), b0)
    b = np.minimum(np.maximum(hi, a0), b0)
    m = b > a
    val = float(np.sum(c[m] * (b[m] - a[m]) - 0.5 * (b[m] ** 2 - a[m] ** 2)))
    return sign * val


def step_approximate(
    f: Callable[[float], float],
    max_step: float,
    direction: str,
    grid: int = 4097,
) -> StepFn:
    """Staircase above or below a monotone nondecreasing f on [0, 1].

    The result dominates f pointwise (direction="above") or is dominated
    by it ("below"), with consecutive value gaps <= max_step.  The grid is
    refined until per-cell increments of f fit under max_step; a monotone
    violation on the evaluation grid is rejected.
    """
    if max_step <= 0.0:
        raise ValueError("max_step must be positive")
    if direction not in ("above", "below"):
        raise ValueError("direction must be 'above' or 'below'")
    n = max(grid, 3)
    for _ in range(8):
        xs = np.linspace(0.0, 1.0, n)
        ys = np.asarray([float(f(float(x))) for x in xs])
        if np.any(np.diff(ys) < -1e-12):
            raise ValueError("f is not monotone nondecreasing on the grid")
        if ys.min() < -1e-12 or ys.max() > 1.0 + 1e-12:
            raise ValueError("f must have range within [0, 1]")
        ys = np.clip(ys, 0.0, 1.0)
        if np.max(np.diff(ys)) <= max_step:
            break
        n = 2 * (n - 1) + 1
    else:
        raise ValueError("f increments exceed max_step at the finest grid (jump?)")
    # Greedy cell boundaries: extend each cell while the value increment
    # stays under max_step.  sel always starts at 0 and ends at n-1 (x=1).
    sel = [0]
    while sel[-1] < n - 1:
        k = sel[-1] + 1
        while k + 1 < n and ys[k + 1] - ys[sel[-1]] <= max_step:
            k += 1
        sel.append(k)
    # Cell i spans [xs[sel[i]], xs[sel[i+1]]); "above" takes the value at
    # the right edge (>= f on the cell), "below" at the left edge.
    starts = [float(xs[i]) for i in sel[:-1]]
    if direction == "above":
        cell_vals = [float(ys[i]) for i in sel[1:]]
    else:
        cell_vals = [float(ys[i]) for i in sel[:-1]]
    # Collapse equal consecutive values.
    pos_out = [starts[0]]
    val_out = [cell_vals[0]]
    for p, v in zip(starts[1:], cell_vals[1:]):
        if v != val_out[-1]:
            pos_out.append(p)
            val_out.append(v)
    return StepFn.from_grid(pos_out, val_out)
