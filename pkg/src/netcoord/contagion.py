"""Contagion-wave machinery: lens geometry, wave solver, wave builder.

The geometric primitives describe how much of a unit-radius
neighborhood on the plane lies behind a front:

* ``lens_f0(d, r1, r2)``: area of the intersection of two discs (radii
  r1, r2, centers d apart) divided by pi;
* ``front_f(x)``: the limit profile of a straight front, the unit-disc
  segment of height 1 + x over pi.  It is "balanced": f(-1) = 0 and
  f(x) + f(-x) = 1.

``solve_wave`` computes step thresholds 0 = v_0 < v_1 < ... < v_L for a
step game Q via the monotone fixed-point iteration of the capped
first-crossing map, so that the average action experienced at each
threshold stays at or below the inverse of the next step value.

``build_delta_wave`` assembles a delta-contagion wave for a game P with
P(1) < 1 and a strictly dominant low outcome: it lifts P by delta,
approximates from above by a fine staircase topping out at 1, shifts,
solves the wave, and verifies the wave inequality on a grid, shrinking
delta geometrically until verification passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .stepfn import StepFn, loss_L, ru_dominant

__all__ = [
    "lens_f0",
    "front_f",
    "front_f_array",
    "wave_value",
    "WaveSolution",
    "solve_wave",
    "check_ru_wave",
    "ContagionWave",
    "build_delta_wave",
    "WaveConstructionError",
]


class WaveConstructionError(RuntimeError):
    """Raised when no verified wave is found within the delta search."""


def lens_f0(d: float, r1: float, r2: float) -> float:
    """Disc intersection area over pi for radii r1 <= 1 <= r2 at distance d."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    if not (0.0 < r1 <= 1.0):
        raise ValueError("r1 must lie in (0, 1]")
    if r2 < 1.0:
        raise ValueError("r2 must be at least 1")
    if d >= r1 + r2:
        return 0.0
    if d <= r2 - r1:
        return r1 * r1  # small disc contained; equals 1 when r1 = 1
    d1 = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    d2 = d - d1
    a1 = min(1.0, max(-1.0, d1 / r1))
    a2 = min(1.0, max(-1.0, d2 / r2))
    area = (
        r1 * r1 * math.acos(a1)
        - d1 * math.sqrt(max(0.0, r1 * r1 - d1 * d1))
        + r2 * r2 * math.acos(a2)
        - d2 * math.sqrt(max(0.0, r2 * r2 - d2 * d2))
    )
    return area / math.pi


def front_f(x: float) -> float:
    """Balanced front profile: unit-disc segment of height 1 + x over pi."""
    if x <= -1.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return (math.acos(-x) + x * math.sqrt(1.0 - x * x)) / math.pi


def front_f_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, -1.0, 1.0)
    out = (np.arccos(-xc) + xc * np.sqrt(np.maximum(0.0, 1.0 - xc * xc))) / math.pi
    out[x <= -1.0] = 0.0
    out[x >= 1.0] = 1.0
    return out


def _check_wave_vector(v: np.ndarray, strict: bool = False) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == 0 or v[0] != 0.0:
        raise ValueError("wave thresholds must start at v_0 = 0")
    gaps = np.diff(v)
    if np.any(gaps < (1e-15 if strict else 0.0) - 1e-15):
        raise ValueError("wave thresholds must be monotone")
    if np.any(gaps > 1.0 + 1e-9):
        raise ValueError("wave threshold gaps must not exceed 1")
    return v


def wave_value(x: float, v: np.ndarray, steps: np.ndarray, f: Callable[[float], float] = front_f) -> float:
    """Average action experienced at location x under the step strategy.

    F(x|v) = a_0 + sum_k (1 - f(v_k - x)) (a_{k+1} - a_k), with steps
    a_0 .. a_{L+1} and thresholds v_0 .. v_L.
    """
    v = _check_wave_vector(v)
    a = np.asarray(steps, dtype=float)
    if a.size != v.size + 1:
        raise ValueError("need one more step value than thresholds")
    total = float(a[0])
    for k in range(v.size):
        total += (1.0 - f(float(v[k] - x))) * float(a[k + 1] - a[k])
    return total


@dataclass(frozen=True)
class WaveSolution:
    """Steps a_0 < ... < a_{L+1} and thresholds 0 = v_0 < ... < v_L.

    ``residuals[l]`` is the slack of target_{l} - F(v_l | v) for
    l = 1..L (nonnegative up to 1e-9 on valid solutions).
    """

    steps: np.ndarray
    thresholds: np.ndarray
    residuals: np.ndarray

    @property
    def L(self) -> int:
        return int(self.thresholds.size - 1)

    def to_json_dict(self) -> dict:
        return {
            "steps": self.steps.tolist(),
            "thresholds": self.thresholds.tolist(),
            "residuals": self.residuals.tolist(),
        }


def check_ru_wave(steps: np.ndarray, inv_positions: np.ndarray) -> tuple[bool, float, float]:
    """Check int_{a0}^{a} (Q^{-1}(x) - x) dx > 0 for each step value a > a0.

    ``inv_positions[l]`` is Q^{-1}(steps[l]).  The integrand is linear in
    x between consecutive step values, so the integral is checked at the
    values and midpoints.  Returns (ok, worst value, worst location).
    """
    a = np.asarray(steps, dtype=float)
    q = np.asarray(inv_positions, dtype=float)
    worst = math.inf
    worst_at = math.nan
    total = 0.0
    for l in range(1, a.size):
        lo, hi = a[l - 1], a[l]
        cpos = q[l]
        mid = 0.5 * (lo + hi)
        part_mid = total + (cpos * (mid - lo) - 0.5 * (mid * mid - lo * lo))
        total += cpos * (hi - lo) - 0.5 * (hi * hi - lo * lo)
        for val, at in ((part_mid, mid), (total, hi)):
            if at > a[0] and val < worst:
                worst, worst_at = val, at
    return worst > 0.0, worst, worst_at


def solve_wave(
    Q: StepFn | None = None,
    f: Callable[[float], float] = front_f,
    tol: float = 1e-10,
    steps: np.ndarray | None = None,
    inv_positions: np.ndarray | None = None,
    max_iter: int = 100_000,
) -> WaveSolution:
    """Wave thresholds for a step game via the monotone b* iteration.

    Either pass a step function Q (values strictly increasing, top value
    1) or the raw (steps, inv_positions) arrays with inv_positions[l] =
    Q^{-1}(steps[l]).  The map b*_l(v) = min(b_l(v), v_{l-1} + 1), with
    b_l the first location where F(x|v) reaches Q^{-1}(a_{l+1}), is
    iterated from the zero vector until successive iterates differ by
    less than tol in max norm.  b_l is found by monotone bisection in x
    (all coordinates bisected in parallel) to 1e-10.
    """
    if Q is not None:
        a = Q.piece_values
        q = Q.piece_positions
        if np.any(np.diff(a) <= 0):
            raise ValueError("Q's step values must be strictly increasing")
        if a[-1] != 1.0:
            raise ValueError("Q's top step must be exactly 1")
    else:
        a = np.asarray(steps, dtype=float)
        q = np.asarray(inv_positions, dtype=float)
    ok, worst, worst_at = check_ru_wave(a, q)
    if not ok:
        raise ValueError(
            f"RU wave condition violated: integral {worst:.3e} at a={worst_at:.6f}"
        )
    L = a.size - 2
    if L < 1:
        raise ValueError("need at least two steps above the base")
    targets = q[2:].copy()  # Q^{-1}(a_{l+1}) for l = 1..L
    jumps = np.diff(a)
    f_arr = front_f_array if f is front_f else lambda z: np.vectorize(f)(z)

    def F_at(xs: np.ndarray, v: np.ndarray) -> np.ndarray:
        # F(x|v) = a0 + sum_k (1 - f(v_k - x)) jumps_k, vectorized over xs.
        return a[0] + (1.0 - f_arr(v[None, :] - xs[:, None])) @ jumps

    v = np.zeros(L + 1)
    for _ in range(max_iter):
        # Parallel bisection for b_l = inf{x >= 0 : F(x|v) >= target_l}.
        lo = np.zeros(L)
        hi = np.full(L, float(v[-1] + 1.0))
        at_zero = F_at(np.zeros(1), v)[0]
        done_zero = targets <= at_zero
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            reach = F_at(mid, v) >= targets
            hi = np.where(reach, mid, hi)
            lo = np.where(reach, lo, mid)
            if np.max(hi - lo) <= 1e-12:
                break
        b = np.where(done_zero, 0.0, hi)
        new = v.copy()
        new[1:] = np.minimum(b, v[:-1] + 1.0)
        # The exact map is monotone; clip away bisection jitter so the
        # iterate sequence stays nondecreasing.
        new = np.maximum(new, v)
        if np.max(np.abs(new - v)) < tol:
            v = new
            break
        v = new
    else:
        raise WaveConstructionError("wave iteration did not converge")
    residuals = targets - F_at(v[1:], v)
    return WaveSolution(steps=a.copy(), thresholds=v, residuals=residuals)


@dataclass(frozen=True)
class ContagionWave:
    """A delta-contagion wave: base action, thresholds, and tail 1.

    sigma(x) = a_star for x < 0, the l-th step value on [v_{l-1}, v_l),
    and 1 at and beyond v_L; delta is the verified contagion margin.
    """

    wave: WaveSolution
    delta: float
    a_star: float

    @property
    def L(self) -> int:
        return self.wave.L

    def sigma(self, x: float) -> float:
        v = self.wave.thresholds
        a = self.wave.steps
        if x < 0.0:
            return float(a[0])
        idx = int(np.searchsorted(v, x, side="right"))
        return float(a[idx])

    def sigma_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = self.wave.thresholds
        a = self.wave.steps
        idx = np.searchsorted(v, x, side="right")
        out = a[idx]
        out = np.where(x < 0.0, a[0], out)
        return out

    def experienced_fraction(self, x: np.ndarray) -> np.ndarray:
        """a* + sum over jumps (1 - f(jump_location - x)) * jump size.

        For sorted inputs the transition window |v_k - x| < 1 of each
        jump is located by bisection, so points outside every window
        cost O(1) per jump.
        """
        x = np.asarray(x, dtype=float)
        v = self.wave.thresholds
        jumps = np.diff(self.wave.steps)
        if x.ndim != 1 or np.any(np.diff(x) < 0):
            out = np.full(x.shape, float(self.wave.steps[0]))
            for k in range(v.size):
                out += (1.0 - front_f_array(v[k] - x)) * jumps[k]
            return out
        n = x.size
        out = np.full(n, float(self.wave.steps[0]))
        const = np.zeros(n + 1)
        for k in range(v.size):
            lo = int(np.searchsorted(x, v[k] - 1.0, side="right"))
            hi = int(np.searchsorted(x, v[k] + 1.0, side="left"))
            if lo < hi:
                out[lo:hi] += (1.0 - front_f_array(v[k] - x[lo:hi])) * jumps[k]
            const[hi] += jumps[k]  # fully-passed front: contribution = jump
        out += np.cumsum(const[:-1])
        return out

    def verify_grid(self, P: StepFn, spacing: float | None = None) -> tuple[bool, float, float]:
        """Check sigma(x - delta) >= delta + P(delta + a* + sum ...) on a grid.

        Returns (ok, min slack, worst x).  Grid spacing defaults to
        delta / 4 and always includes points in all three branch regions.
        """
        d = self.delta
        if spacing is None:
            spacing = d / 4.0
        v = self.wave.thresholds
        lo, hi = -1.0 - d, float(v[-1]) + 1.0 + 2.0 * d
        n = min(int(math.ceil((hi - lo) / spacing)) + 1, 2_000_001)
        xs = np.linspace(lo, hi, n)
        extra = np.concatenate([[d / 2.0], (v[:-1] + d + 1e-12), [v[-1] + d, v[-1] + d + 1.0]])
        xs = np.unique(np.concatenate([xs, extra]))
        frac = self.experienced_fraction(xs)
        arg = np.clip(d + frac, 0.0, 1.0)
        rhs = d + P.eval_array(arg)
        lhs = self.sigma_array(xs - d)
        slack = lhs - rhs
        worst = int(np.argmin(slack))
        return bool(slack[worst] >= -1e-12), float(slack[worst]), float(xs[worst])

    def to_json_dict(self) -> dict:
        doc = self.wave.to_json_dict()
        doc.update({"delta": self.delta, "a_star": self.a_star})
        return doc


def _staircase_above(P: StepFn, lift: float) -> tuple[np.ndarray, np.ndarray]:
    """Staircase Q >= P + lift with value gaps <= lift/4 and top exactly 1.

    Returns (values, positions).  Levels descend from 1 in steps of
    lift/4 down to the base level P(0) + lift; level j starts where
    P + lift first exceeds level j-1.  Levels that P + lift never
    reaches are squeezed in just left of x = 1 (or of the next jump), in
    strictly increasing position order; nudging a jump left only raises
    Q, preserving the domination.
    """
    gap = lift / 4.0
    base = P._vals[0] + lift
    if base > 1.0:
        raise WaveConstructionError("lift exceeds the headroom above P(0)")
    down = [1.0]
    while down[-1] - gap > base + 1e-15:
        down.append(down[-1] - gap)
    down.append(base)
    levels = np.asarray(down[::-1])
    n_levels = levels.size
    raw = [0.0]
    for j in range(1, n_levels):
        thresh = levels[j - 1] - lift
        idx = int(np.searchsorted(P._vals, thresh, side="right"))
        raw.append(float(P._pos[idx]) if idx < P._vals.size else 1.0)
    raw = np.maximum.accumulate(np.asarray(raw))
    spread = min(1e-6, gap * 1e-3)
    pos = raw.copy()
    for j in range(n_levels - 2, 0, -1):
        pos[j] = min(pos[j], pos[j + 1] - spread)
    if n_levels > 1 and pos[1] <= 0.0:
        raise WaveConstructionError("staircase squeeze ran out of room near 0")
    # Safety: Q >= P + lift at every breakpoint of either function.
    Q = StepFn.from_grid(pos.tolist(), levels.tolist())
    probe = np.unique(np.concatenate([P._pos, pos, [1.0]]))
    if np.min(Q.eval_array(probe) - P.eval_array(probe) - lift) < -1e-12:
        raise AssertionError("staircase failed to dominate P + lift")
    return levels, pos


def build_delta_wave(
    P: StepFn,
    eta: float,
    max_halvings: int = 20,
    f: Callable[[float], float] = front_f,
) -> ContagionWave:
    """Construct and verify a delta-contagion wave for P.

    Requires P(1) < 1 and a strictly dominant maximizer x* of the
    dominance integral.  The returned wave has base action a* <= x* + eta
    and passes the grid verification of the wave inequality.  delta is
    found by geometric search over {eta / 2^k}.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if P.top >= 1.0:
        raise ValueError("build_delta_wave requires P(1) < 1")
    maximizers, strict = ru_dominant(P)
    if not strict:
        raise ValueError("build_delta_wave requires a strictly dominant maximizer")
    x_star = maximizers[0]
    last_err: str = "no admissible delta tried"
    for k in range(1, max_halvings + 1):
        delta1 = min(eta, 1.0 - P.top) / (2.0**k)
        try:
            levels, pos = _staircase_above(P, delta1)
            Q = StepFn.from_grid(pos.tolist(), levels.tolist())
            q_max, _ = ru_dominant(Q)
            a_star = q_max[-1]
            if a_star > x_star + eta:
                last_err = f"a*={a_star} drifted above x*+eta at delta1={delta1}"
                continue
            # delta2: uniform strictness margin of the RU-wave integral
            # above a_star.
            cand_vals = [v for v in Q.piece_values if v > a_star] + [1.0]
            cands = []
            prev = a_star
            for v in sorted(set(cand_vals)):
                cands.extend([0.5 * (prev + v), v])
                prev = v
            margins = [
                loss_L(Q, a_star, c) / (c - a_star) for c in cands if c > a_star
            ]
            margin = min(margins)
            if margin <= 0.0:
                last_err = f"RU-wave margin nonpositive at delta1={delta1}"
                continue
            delta2 = min(delta1 / 2.0, margin / 2.0)
            # Wave steps: base a_star plus the Q values above it; targets
            # are the shifted inverse positions of Q_{delta2}.
            vals = Q.piece_values
            keep = vals > a_star
            steps = np.concatenate([[a_star], vals[keep]])
            inv = np.concatenate([[0.0], Q.piece_positions[keep]]) - delta2
            inv[0] = 0.0
            sol = solve_wave(steps=steps, inv_positions=inv, f=f)
            if np.any(np.diff(sol.thresholds) <= 0):
                last_err = f"wave thresholds not strictly increasing at delta1={delta1}"
                continue
            delta = min(delta2, float(np.min(np.diff(sol.thresholds))))
            wave = ContagionWave(wave=sol, delta=delta, a_star=a_star)
            ok, slack, worst_x = wave.verify_grid(P)
            if ok:
                return wave
            last_err = f"grid verification failed at x={worst_x:.6f} (slack {slack:.3e})"
        except (ValueError, WaveConstructionError) as e:
            last_err = str(e)
    raise WaveConstructionError(f"no verified wave for eta={eta}: {last_err}")
