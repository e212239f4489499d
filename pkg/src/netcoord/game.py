"""Canonical representation of a random-utility coordination game.

Only the threshold distribution matters for equilibrium behavior, so a
game is carried as a ``ThresholdDist`` wrapping the continuum best
response step function P.  Per-agent best-response thresholds are drawn
by inverse transform: t_i = P^{-1}(u_i) with u_i ~ U[0, 1).

Threshold conventions:

* t in (0, 1]  -- interior type: action 1 is the (upper) best response
  exactly when the neighborhood fraction reaches t;
* t = 0        -- action 1 dominant (the DOMINANT_1 marker; plays 1
  under both tie rules, mirroring the +inf marker);
* t = +inf     -- action 0 strictly dominant ("extraordinary" agent).

Sampling uses the counter-based Philox generator keyed on
(seed, stream) so parallel replications are bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .stepfn import INV_SENTINEL, StepFn

__all__ = [
    "DOMINANT_1",
    "ThresholdDist",
    "ShockProfile",
    "additive_game",
    "uniform_shock_cdf",
    "sample_shocks",
    "best_response",
    "best_response_array",
    "canonical_payoff",
]

# Threshold marker for "action 1 dominant": encoded as 0.0.
DOMINANT_1 = 0.0


@dataclass(frozen=True)
class ThresholdDist:
    """A game reduced to its continuum best response function."""

    P: StepFn
    provenance: dict = field(default_factory=lambda: {"kind": "direct"})

    def to_json_dict(self) -> dict:
        return {"P": self.P.to_json_dict(), "provenance": self.provenance}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ThresholdDist":
        return cls(P=StepFn.from_json_dict(doc["P"]), provenance=doc.get("provenance", {"kind": "direct"}))


@dataclass(frozen=True)
class ShockProfile:
    """Realized best-response thresholds for one population draw.

    ``thresholds`` holds t_i (np.inf for action-0-dominant agents);
    ``uniform_draws`` keeps the underlying uniforms for reproducibility.
    """

    thresholds: np.ndarray
    uniform_draws: np.ndarray
    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=float))
        object.__setattr__(self, "uniform_draws", np.asarray(self.uniform_draws, dtype=float))
        if self.thresholds.shape != self.uniform_draws.shape:
            raise ValueError("thresholds and uniform_draws must have equal length")

    @property
    def n(self) -> int:
        return int(self.thresholds.size)

    def to_json(self) -> str:
        rows = [
            [i, float(u), ("inf" if math.isinf(t) else float(t))]
            for i, (u, t) in enumerate(zip(self.uniform_draws, self.thresholds))
        ]
        return json.dumps({"seed": self.seed, "stream": self.stream, "agents": rows})

    @classmethod
    def from_json(cls, text: str) -> "ShockProfile":
        doc = json.loads(text)
        u = np.array([row[1] for row in doc["agents"]], dtype=float)
        t = np.array(
            [math.inf if row[2] == "inf" else float(row[2]) for row in doc["agents"]],
            dtype=float,
        )
        return cls(thresholds=t, uniform_draws=u, seed=doc["seed"], stream=doc.get("stream", 0))


def uniform_shock_cdf(lo: float = -0.5, hi: float = 0.5) -> Callable[[float], float]:
    """CDF of the uniform distribution on [lo, hi]."""
    width = hi - lo
    if width <= 0:
        raise ValueError("hi must exceed lo")

    def cdf(e: float) -> float:
        return min(1.0, max(0.0, (e - lo) / width))

    return cdf


def _midpoint_staircase(f: Callable[[float], float], max_step: float) -> StepFn:
    """Midpoint staircase of a monotone f: neither dominating nor dominated."""
    n = 4097
    for _ in range(8):
        xs = np.linspace(0.0, 1.0, n)
        ys = np.clip(np.asarray([float(f(float(x))) for x in xs]), 0.0, 1.0)
        if np.any(np.diff(ys) < -1e-12):
            raise ValueError("shock law produced a non-monotone P")
        if np.max(np.diff(ys)) <= max_step:
            break
        n = 2 * (n - 1) + 1
    else:
        raise ValueError("P increments exceed max_step at the finest grid")
    sel = [0]
    while sel[-1] < n - 1:
        k = sel[-1] + 1
        while k + 1 < n and ys[k + 1] - ys[sel[-1]] <= max_step:
            k += 1
        sel.append(k)
    starts = [float(xs[i]) for i in sel[:-1]]
    mids = [0.5 * (float(ys[sel[i]]) + float(ys[sel[i + 1]])) for i in range(len(sel) - 1)]
    pos_out, val_out = [starts[0]], [mids[0]]
    for p, v in zip(starts[1:], mids[1:]):
        if v != val_out[-1]:
            pos_out.append(p)
            val_out.append(v)
    return StepFn.from_grid(pos_out, val_out)


def additive_game(
    alpha: float,
    lam: float,
    shock_cdf: Callable[[float], float],
    max_step: float,
) -> ThresholdDist:
    """Additive-shock coordination game reduced to its threshold law.

    The threshold of an agent with shock e is beta(e) = alpha - lam * e,
    so P(x) = Prob(alpha - lam e <= x) = 1 - F((alpha - x) / lam) plus the
    mass of the atom at the boundary when F has one.  The returned P is a
    midpoint staircase with value gaps <= max_step.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")

    def P_exact(x: float) -> float:
        # Prob(e >= (alpha - x)/lam); atoms only matter on a null set of x
        # for the staircase grid, so the continuous formula is used.
        return 1.0 - shock_cdf((alpha - x) / lam)

    P = _midpoint_staircase(P_exact, max_step)
    prov = {"kind": "additive", "alpha": alpha, "lambda": lam, "max_step": max_step}
    return ThresholdDist(P=P, provenance=prov)


def _philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def sample_shocks(dist: ThresholdDist, n: int, seed: int, stream: int = 0) -> ShockProfile:
    """Draw n i.i.d. thresholds with law Prob(t <= x) = P(x).

    Deterministic given (seed, stream, n): same inputs give bit-identical
    thresholds.  Agents with u_i above P(1) get t_i = +inf.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _philox(int(seed), int(stream))
    u = rng.random(n)
    t = dist.P.inverse_array(u)
    return ShockProfile(thresholds=t, uniform_draws=u, seed=int(seed), stream=int(stream))


def best_response(t: float, beta: float, tie: str) -> int:
    """Best response of an agent with threshold t facing fraction beta.

    Upper rule: 1 iff t <= beta.  Lower rule: 1 iff t < beta, except the
    two dominance markers: t = +inf always plays 0, t = 0 (DOMINANT_1)
    always plays 1.
    """
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must lie in [0, 1]")
    if math.isinf(t):
        return 0
    if tie == "upper":
        return 1 if t <= beta else 0
    if tie == "lower":
        return 1 if (t < beta or t == DOMINANT_1) else 0
    raise ValueError("tie must be 'upper' or 'lower'")


def best_response_array(t: np.ndarray, beta: np.ndarray, tie: str) -> np.ndarray:
    """Vectorized best responses as a float 0/1 array."""
    t = np.asarray(t, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if tie == "upper":
        out = t <= beta
    elif tie == "lower":
        out = (t < beta) | (t == DOMINANT_1)
    else:
        raise ValueError("tie must be 'upper' or 'lower'")
    return out.astype(float)


def canonical_payoff(x: float, eps: float, P: StepFn, action: int) -> float:
    """Payoff in the canonical game: x - P^{-1}(eps) for action 1, 0 else.

    The inverse is clamped at the sentinel used by the integral algebra so
    arithmetic stays finite for eps above P(1).
    """
    if action == 0:
        return 0.0
    if action != 1:
        raise ValueError("action must be 0 or 1")
    return x - min(P.inverse(eps), INV_SENTINEL)
