"""Best-response dynamics, equilibria, capacities, and the bound auditor.

Two layers of dynamics are provided:

* ``upper_dynamics`` / ``lower_dynamics``: asynchronous one-flip-per-step
  processes that revise the minimum-index agent whose best response
  disagrees with her action (upward under the upper tie rule, downward
  under the lower one).  They record a full ``DynamicsTrace`` with
  per-step capacities and are the objects audited against the capacity
  inequality.
* ``upper_closure`` / ``lower_closure``: synchronous, vectorized monotone
  iterations with the same limits (order independence), used where only
  the final profile matters.

Capacities:

* capacity_simple F0(a) = sum over ordered pairs (i plays 1, j plays 0)
  of g_ij -- mass of 1-0 links;
* capacity F(p) = 1/2 sum_ij g_ij (p_i - p_j)^2 on expected-action
  profiles p_i = P(beta_i); equals F0 on pure profiles.

``audit_main_bound`` replays an upper trace started from
``initial_profile`` and checks the deterministic per-realization
inequality

    2 sum_i g_i L(p_i^{T+1})
        <= F(p^0) + A + 2 sum_i g_i |beta_i^0 - x*| + 2 d(g) sum_i g_i,

with A the cross term accumulated along the trace.

A single dynamics run is strictly sequential (asynchronous revisions);
distinct replications run concurrently with no shared mutable state,
sharing the Network and the threshold distribution read-only.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .game import ShockProfile, best_response_array, DOMINANT_1
from .network import Network, fineness, is_pure, neighborhood_fractions
from .stepfn import StepFn, loss_L

__all__ = [
    "TraceStep",
    "DynamicsTrace",
    "BoundAudit",
    "is_equilibrium",
    "upper_dynamics",
    "lower_dynamics",
    "upper_closure",
    "lower_closure",
    "initial_profile",
    "extremal_equilibria",
    "enumerate_equilibria",
    "capacity_simple",
    "capacity",
    "audit_main_bound",
    "capacity_decrement_check",
    "trace_to_jsonl",
]

_BETA_AUDIT_EVERY = 512  # full beta recomputation cadence (drift <= 1e-12)


@dataclass(frozen=True)
class TraceStep:
    t: int
    agent: int
    beta_before: float
    capacity_simple: float
    capacity: float


@dataclass
class DynamicsTrace:
    steps: list[TraceStep]
    initial_profile: np.ndarray
    final_profile: np.ndarray
    stop_reason: str  # "fixed_point" | "step_limit"
    direction: str  # "upper" | "lower"

    @property
    def n_steps(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class BoundAudit:
    lhs: float
    capacity0: float
    cross_term_A: float
    beta_deviation: float
    fineness_term: float
    satisfied: bool

    def to_json_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "capacity0": self.capacity0,
            "cross_term_A": self.cross_term_A,
            "beta_deviation": self.beta_deviation,
            "fineness_term": self.fineness_term,
            "satisfied": self.satisfied,
        }


def _thresholds(shocks: ShockProfile, g: Network) -> np.ndarray:
    t = shocks.thresholds
    if t.size != g.n:
        raise ValueError(f"shock profile size {t.size} does not match n={g.n}")
    return t


def is_equilibrium(g: Network, shocks: ShockProfile, a: np.ndarray, tie: str) -> bool:
    """True iff every agent's action equals her best response under tie."""
    a = np.asarray(a, dtype=float)
    if not is_pure(a):
        raise ValueError("is_equilibrium expects a pure profile")
    t = _thresholds(shocks, g)
    beta = neighborhood_fractions(g, a)
    return bool(np.array_equal(best_response_array(t, beta, tie), a))


def capacity_simple(g: Network, a: np.ndarray) -> float:
    """F0(a): g-mass of ordered links from action-1 agents to action-0 agents."""
    a = np.asarray(a, dtype=float)
    if not is_pure(a):
        raise ValueError("capacity_simple expects a pure profile")
    return float(a @ (g.weights @ (1.0 - a)))


def capacity(g: Network, p: np.ndarray) -> float:
    """F(p) = 1/2 sum_ij g_ij (p_i - p_j)^2."""
    p = np.asarray(p, dtype=float)
    W = g.weights.tocoo()
    d = p[W.row] - p[W.col]
    return 0.5 * float(np.dot(W.data, d * d))


# ------------------------------------------------------------------ dynamics


class _CapacityState:
    """Incrementally maintained (F0, F) along a one-flip-per-step path."""

    def __init__(self, g: Network, a: np.ndarray, P: StepFn | None):
        self.g = g
        self.W = g.weights
        self.P = P
        self.F0 = capacity_simple(g, a)
        if P is not None:
            beta = neighborhood_fractions(g, a)
            self.p = P.eval_array(beta)
            self.q = self.W @ self.p
            self.s1 = float(np.dot(g.degrees, self.p * self.p))
            self.cross = float(np.dot(self.p, self.q))

    @property
    def F(self) -> float:
        if self.P is None:
            return math.nan
        return self.s1 - self.cross

    def apply_flip(self, i: int, beta_before: float, up: bool, beta: np.ndarray):
        """Update after agent i flipped; ``beta`` is the post-flip array."""
        sign = 1.0 if up else -1.0
        self.F0 += sign * self.g.degrees[i] * (1.0 - 2.0 * beta_before)
        if self.P is None:
            return
        W = self.W
        lo, hi = W.indptr[i], W.indptr[i + 1]
        J = W.indices[lo:hi]
        p_new = self.P.eval_array(beta[J])
        delta = p_new - self.p[J]
        if np.any(delta != 0.0):
            g_J = self.g.degrees[J]
            self.s1 += float(np.dot(g_J, 2.0 * self.p[J] * delta + delta * delta))
            # cross = p.(Wp); with symmetric W and dp supported on J:
            # cross' = cross + 2 q.dp + dp.(W dp).
            WJ = W[J]
            quad = float(delta @ (WJ[:, J] @ delta))
            self.cross += 2.0 * float(np.dot(self.q[J], delta)) + quad
            self.q += WJ.T @ delta
            self.p[J] = p_new


def _async_dynamics(
    g: Network,
    shocks: ShockProfile,
    a0: np.ndarray,
    step_limit: int | None,
    direction: str,
    P: StepFn | None,
    order: str = "min-index",
    order_seed: int = 0,
) -> DynamicsTrace:
    t = _thresholds(shocks, g)
    a = np.asarray(a0, dtype=float).copy()
    if not is_pure(a):
        raise ValueError("dynamics need a pure starting profile")
    n = g.n
    if step_limit is None:
        step_limit = 4 * n
    up = direction == "upper"
    W = g.weights
    deg = g.degrees
    beta = neighborhood_fractions(g, a)
    cap = _CapacityState(g, a, P)

    if up:
        flippable = (a == 0.0) & (t <= beta) & np.isfinite(t)
    else:
        flippable = (a == 1.0) & (t >= beta) & (t != DOMINANT_1)
    heap = list(np.nonzero(flippable)[0])
    rng = np.random.default_rng(order_seed) if order == "random" else None
    if rng is None:
        heapq.heapify(heap)
    in_heap = flippable.copy()

    steps: list[TraceStep] = []
    stop_reason = "fixed_point"
    step_idx = 0
    while heap:
        if step_idx >= step_limit:
            stop_reason = "step_limit"
            break
        if rng is None:
            i = heapq.heappop(heap)
        else:
            k = int(rng.integers(len(heap)))
            heap[k], heap[-1] = heap[-1], heap[k]
            i = heap.pop()
        i = int(i)
        beta_before = float(beta[i])
        a[i] = 1.0 if up else 0.0
        lo, hi = W.indptr[i], W.indptr[i + 1]
        J = W.indices[lo:hi]
        w = W.data[lo:hi]
        beta[J] += (w / deg[J]) if up else -(w / deg[J])
        cap.apply_flip(i, beta_before, up, beta)
        steps.append(TraceStep(step_idx, i, beta_before, cap.F0, cap.F))
        # Newly flippable neighbors; flippability is monotone along the path.
        if up:
            newly = J[(a[J] == 0.0) & (t[J] <= beta[J]) & np.isfinite(t[J]) & ~in_heap[J]]
        else:
            newly = J[(a[J] == 1.0) & (t[J] >= beta[J]) & (t[J] != DOMINANT_1) & ~in_heap[J]]
        for j in newly:
            if rng is None:
                heapq.heappush(heap, int(j))
            else:
                heap.append(int(j))
        in_heap[newly] = True
        step_idx += 1
        if step_idx % _BETA_AUDIT_EVERY == 0:
            fresh = neighborhood_fractions(g, a)
            if np.max(np.abs(fresh - beta)) > 1e-12:
                raise AssertionError("incremental beta drifted beyond 1e-12")
            beta = fresh
    return DynamicsTrace(
        steps=steps,
        initial_profile=np.asarray(a0, dtype=float).copy(),
        final_profile=a,
        stop_reason=stop_reason,
        direction=direction,
    )


def upper_dynamics(
    g: Network,
    shocks: ShockProfile,
    a0: np.ndarray,
    step_limit: int | None = None,
    P: StepFn | None = None,
    order: str = "min-index",
    order_seed: int = 0,
) -> DynamicsTrace:
    """Flip the minimum-index agent with action 0 and upper best response 1.

    Terminates in at most n flips; the final profile has no agent who
    wants to move up, and is independent of the revision order.  Pass P
    to record the real capacity F alongside F0 in the trace.
    """
    return _async_dynamics(g, shocks, a0, step_limit, "upper", P, order, order_seed)


def lower_dynamics(
    g: Network,
    shocks: ShockProfile,
    a0: np.ndarray,
    step_limit: int | None = None,
    P: StepFn | None = None,
    order: str = "min-index",
    order_seed: int = 0,
) -> DynamicsTrace:
    """Mirror image: flips agents playing 1 whose lower best response is 0."""
    return _async_dynamics(g, shocks, a0, step_limit, "lower", P, order, order_seed)


def upper_closure(g: Network, shocks: ShockProfile, a0: np.ndarray) -> np.ndarray:
    """Synchronous least up-stable profile above a0 (same limit as async)."""
    t = _thresholds(shocks, g)
    a = np.asarray(a0, dtype=float).copy()
    for _ in range(g.n + 2):
        beta = neighborhood_fractions(g, a)
        new = np.maximum(a, best_response_array(t, beta, "upper"))
        if np.array_equal(new, a):
            return a
        a = new
    raise AssertionError("upper closure failed to converge in n+2 sweeps")


def lower_closure(g: Network, shocks: ShockProfile, a0: np.ndarray) -> np.ndarray:
    t = _thresholds(shocks, g)
    a = np.asarray(a0, dtype=float).copy()
    for _ in range(g.n + 2):
        beta = neighborhood_fractions(g, a)
        new = np.minimum(a, best_response_array(t, beta, "lower"))
        if np.array_equal(new, a):
            return a
        a = new
    raise AssertionError("lower closure failed to converge in n+2 sweeps")


def initial_profile(P: StepFn, x_star: float, shocks: ShockProfile, seed: int) -> np.ndarray:
    """Profile of best responses to the constant neighborhood fraction x*.

    Agents strictly below threshold play 1, strictly above play 0, and
    the indifferent atom randomizes with the probability that makes each
    action's expectation exactly x*.
    """
    if not (0.0 <= x_star <= 1.0):
        raise ValueError("x_star must lie in [0, 1]")
    t = shocks.thresholds
    mass_below = 0.0 if x_star == 0.0 else P.eval_left(x_star)
    mass_at = P.eval(x_star) - mass_below
    if mass_below > x_star + 1e-12:
        raise ValueError(
            f"initial profile undefined: P(x*-)={mass_below} exceeds x*={x_star}"
        )
    a = np.zeros(t.size)
    a[t < x_star] = 1.0
    at_atom = t == x_star
    if np.any(at_atom):
        p = 0.0
        if mass_at > 0.0:
            p = min(1.0, max(0.0, (x_star - mass_below) / mass_at))
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, 0xA11CE], dtype=np.uint64))
        )
        draws = rng.random(t.size)
        a[at_atom] = (draws[at_atom] < p).astype(float)
    return a


def extremal_equilibria(g: Network, shocks: ShockProfile) -> tuple[np.ndarray, np.ndarray]:
    """Largest upper equilibrium and smallest lower equilibrium.

    Largest: monotone downward iteration from all-ones under the upper
    tie rule; smallest: upward from all-zeros under the lower rule.
    Both limits are equilibria of their tie rule and bracket every Nash
    equilibrium of the realized game.
    """
    t = _thresholds(shocks, g)
    a = np.ones(g.n)
    for _ in range(g.n + 2):
        beta = neighborhood_fractions(g, a)
        new = np.minimum(a, best_response_array(t, beta, "upper"))
        if np.array_equal(new, a):
            break
        a = new
    largest = a
    a = np.zeros(g.n)
    for _ in range(g.n + 2):
        beta = neighborhood_fractions(g, a)
        new = np.maximum(a, best_response_array(t, beta, "lower"))
        if np.array_equal(new, a):
            break
        a = new
    smallest = a
    if not is_equilibrium(g, shocks, largest, "upper"):
        raise AssertionError("largest iterate is not an upper equilibrium")
    if not is_equilibrium(g, shocks, smallest, "lower"):
        raise AssertionError("smallest iterate is not a lower equilibrium")
    if np.any(largest < smallest):
        raise AssertionError("extremal equilibria are not ordered")
    return largest, smallest


def enumerate_equilibria(g: Network, shocks: ShockProfile, tie: str) -> np.ndarray:
    """All pure equilibrium profiles under the tie rule, for n <= 20.

    Returns an array of shape (k, n) in lexicographic order.
    """
    n = g.n
    if n > 20:
        raise ValueError("enumerate_equilibria is guarded at n <= 20")
    t = _thresholds(shocks, g)
    W = g.weights.toarray()
    deg = g.degrees
    found = []
    chunk = 1 << 14
    bits_of = np.arange(n)[::-1]
    for start in range(0, 1 << n, chunk):
        ints = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        prof = ((ints[:, None] >> bits_of) & 1).astype(float)
        beta = (prof @ W) / deg
        if tie == "upper":
            br = (t <= beta) & np.isfinite(t)
        elif tie == "lower":
            br = (t < beta) | (t == DOMINANT_1)
        else:
            raise ValueError("tie must be 'upper' or 'lower'")
        ok = np.all(br.astype(float) == prof, axis=1)
        if np.any(ok):
            found.append(prof[ok])
    return np.concatenate(found, axis=0) if found else np.empty((0, n))


# --------------------------------------------------------------- bound audit


def audit_main_bound(
    g: Network,
    shocks: ShockProfile,
    P: StepFn,
    x_star: float,
    trace: DynamicsTrace,
) -> BoundAudit:
    """Replay an upper trace and check the capacity inequality exactly.

    Every term is recomputed from the replayed profile path; the check is
    a deterministic inequality per realization (slack 1e-9).
    """
    if trace.direction != "upper":
        raise ValueError("the bound audits upper dynamics traces")
    t = _thresholds(shocks, g)
    if trace.initial_profile.size != g.n:
        raise ValueError("trace does not match the network size")
    W = g.weights
    deg = g.degrees
    a = trace.initial_profile.copy()
    beta = neighborhood_fractions(g, a)
    beta0 = beta.copy()
    p = P.eval_array(beta)
    q = W @ p
    capacity0 = capacity(g, p)
    A = 0.0
    for step in trace.steps:
        i = step.agent
        if not (0 <= i < g.n) or a[i] != 0.0:
            raise ValueError("trace replay mismatch: invalid flip")
        lo, hi = W.indptr[i], W.indptr[i + 1]
        J = W.indices[lo:hi]
        w = W.data[lo:hi]
        a[i] = 1.0
        beta_old_J = beta[J].copy()
        beta[J] += w / deg[J]
        p_new_J = P.eval_array(beta[J])
        delta = p_new_J - p[J]
        if np.any(delta != 0.0):
            q_new = q + W[J].T @ delta
            # sum_j g_ij (a_j - p_j) = g_i beta_i - (W p)_i, evaluated at
            # both s = t and s = t+1 for the flipping stage.
            term_old = deg[J] * beta_old_J - q[J]
            term_new = deg[J] * beta[J] - q_new[J]
            A += float(np.dot(delta, term_old + term_new))
            p[J] = p_new_J
            q = q_new
        else:
            # p unchanged: the A increment is zero regardless of a/beta.
            pass
    # lhs: expected actions take values in P's range; evaluate L per value.
    vals, inv = np.unique(p, return_inverse=True)
    L_vals = np.array([loss_L(P, x_star, float(v)) for v in vals])
    lhs = 2.0 * float(np.dot(deg, L_vals[inv]))
    beta_dev = 2.0 * float(np.dot(deg, np.abs(beta0 - x_star)))
    fine_term = 2.0 * fineness(g) * g.total_degree
    rhs = capacity0 + A + beta_dev + fine_term
    return BoundAudit(
        lhs=lhs,
        capacity0=capacity0,
        cross_term_A=A,
        beta_deviation=beta_dev,
        fineness_term=fine_term,
        satisfied=bool(lhs <= rhs + 1e-9),
    )


def capacity_decrement_check(g: Network, shocks: ShockProfile, trace: DynamicsTrace) -> bool:
    """Per-flip capacity decrement for constant thresholds alpha > 1/2.

    True iff at every flip F0 drops by at least (2 alpha - 1) g_i, i.e.
    the exact inequality Delta F0 = g_i (1 - 2 beta_i) <= g_i (1 - 2 alpha).
    """
    t = _thresholds(shocks, g)
    finite = t[np.isfinite(t)]
    if finite.size == 0 or np.any(t != finite[0]):
        raise ValueError("capacity_decrement_check needs constant thresholds")
    alpha = float(finite[0])
    if not (0.5 < alpha <= 1.0):
        raise ValueError("the decrement argument needs alpha > 1/2")
    if trace.direction != "upper":
        raise ValueError("capacity_decrement_check expects an upper trace")
    deg = g.degrees
    for step in trace.steps:
        d_f0 = deg[step.agent] * (1.0 - 2.0 * step.beta_before)
        if d_f0 > deg[step.agent] * (1.0 - 2.0 * alpha) + 1e-9:
            return False
    return True


def trace_to_jsonl(trace: DynamicsTrace) -> str:
    """One JSON record per step: {t, agent, beta_before, F0, F}."""
    lines = []
    for s in trace.steps:
        rec = {
            "t": s.t,
            "agent": s.agent,
            "beta_before": s.beta_before,
            "F0": s.capacity_simple,
            "F": None if math.isnan(s.capacity) else s.capacity,
        }
        lines.append(json.dumps(rec))
    return "\n".join(lines)
