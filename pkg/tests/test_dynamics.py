import math

import numpy as np
import pytest
import scipy.sparse as sp

from netcoord.dynamics import (
    audit_main_bound,
    capacity,
    capacity_decrement_check,
    capacity_simple,
    enumerate_equilibria,
    extremal_equilibria,
    initial_profile,
    is_equilibrium,
    lower_dynamics,
    trace_to_jsonl,
    upper_closure,
    upper_dynamics,
)
from netcoord.game import ShockProfile, ThresholdDist, sample_shocks
from netcoord.network import (
    LatticeSpec,
    Network,
    complete_graph,
    lattice,
    neighborhood_fractions,
)
from netcoord.stepfn import StepFn
from conftest import random_stepfn


def shocks_of(t) -> ShockProfile:
    t = np.asarray(t, dtype=float)
    return ShockProfile(thresholds=t, uniform_draws=np.zeros_like(t), seed=0)


def two_node() -> Network:
    return complete_graph(2)


def random_instance(rng, n_max=10):
    n = int(rng.integers(2, n_max + 1))
    while True:
        W = (rng.random((n, n)) < 0.7).astype(float) * rng.uniform(0.2, 1.0, (n, n))
        W = np.triu(W, 1)
        W = W + W.T
        if np.all(W.sum(axis=1) > 0):
            break
    g = Network.from_weights(sp.csr_matrix(W))
    P = random_stepfn(rng)
    shocks = sample_shocks(ThresholdDist(P=P), n, seed=int(rng.integers(1 << 31)))
    return g, P, shocks


# -------------------------------------------------------------- equilibrium


def test_is_equilibrium_two_node_cases():
    g = two_node()
    s = shocks_of([0.5, 0.5])
    assert is_equilibrium(g, s, np.array([1.0, 1.0]), "upper")
    assert is_equilibrium(g, s, np.array([0.0, 0.0]), "upper")
    assert not is_equilibrium(g, s, np.array([1.0, 0.0]), "upper")


def test_is_equilibrium_rejects_mixed():
    g = two_node()
    with pytest.raises(ValueError):
        is_equilibrium(g, shocks_of([0.5, 0.5]), np.array([0.5, 0.5]), "upper")


# ----------------------------------------------------------- upper dynamics


def test_upper_dynamics_no_flip():
    g = two_node()
    tr = upper_dynamics(g, shocks_of([0.4, 0.6]), np.zeros(2))
    assert tr.n_steps == 0
    assert np.array_equal(tr.final_profile, [0.0, 0.0])
    assert tr.stop_reason == "fixed_point"


def test_upper_dynamics_single_flip():
    g = two_node()
    tr = upper_dynamics(g, shocks_of([0.4, 0.6]), np.array([1.0, 0.0]))
    assert tr.n_steps == 1
    assert tr.steps[0].agent == 1
    assert np.array_equal(tr.final_profile, [1.0, 1.0])


def test_upper_dynamics_order_independence(rng):
    for _ in range(50):
        g, P, shocks = random_instance(rng)
        a0 = (rng.random(g.n) < 0.4).astype(float)
        by_index = upper_dynamics(g, shocks, a0)
        by_random = upper_dynamics(g, shocks, a0, order="random", order_seed=int(rng.integers(1 << 20)))
        sync = upper_closure(g, shocks, a0)
        assert np.array_equal(by_index.final_profile, by_random.final_profile)
        assert np.array_equal(by_index.final_profile, sync)


def test_upper_dynamics_monotone_beta(rng):
    g, P, shocks = random_instance(rng, n_max=8)
    a0 = np.zeros(g.n)
    a0[: g.n // 2] = 1.0
    tr = upper_dynamics(g, shocks, a0)
    # Replay: beta is nondecreasing agent-wise and moves by at most d(g).
    from netcoord.network import fineness

    a = a0.copy()
    beta_prev = neighborhood_fractions(g, a)
    for step in tr.steps:
        a[step.agent] = 1.0
        beta_now = neighborhood_fractions(g, a)
        assert np.all(beta_now >= beta_prev - 1e-12)
        assert np.max(np.abs(beta_now - beta_prev)) <= fineness(g) + 1e-12
        beta_prev = beta_now


def test_upper_dynamics_step_limit_reported():
    g = complete_graph(4)
    s = shocks_of([0.0, 0.0, 0.0, 0.0])
    tr = upper_dynamics(g, s, np.zeros(4), step_limit=2)
    assert tr.stop_reason == "step_limit"
    assert tr.n_steps == 2


def test_upper_from_zeros_positive_thresholds_never_flips(rng):
    for _ in range(20):
        g, P, shocks = random_instance(rng)
        t = np.maximum(shocks.thresholds, 1e-6)
        tr = upper_dynamics(g, shocks_of(t), np.zeros(g.n))
        assert tr.n_steps == 0


# ----------------------------------------------------------- lower dynamics


def test_lower_dynamics_stable_profile():
    g = two_node()
    tr = lower_dynamics(g, shocks_of([0.4, 0.6]), np.ones(2))
    assert tr.n_steps == 0
    assert np.array_equal(tr.final_profile, [1.0, 1.0])


def test_lower_dynamics_dominant_zero_flips_all():
    g = two_node()
    tr = lower_dynamics(g, shocks_of([math.inf, math.inf]), np.ones(2))
    assert tr.n_steps == 2
    assert np.array_equal(tr.final_profile, [0.0, 0.0])


def test_lower_upper_mirror_symmetry(rng):
    # Relabeling actions maps lower dynamics onto upper dynamics with
    # thresholds 1 - t (interior types only) and tie rules swapped.
    for _ in range(50):
        n = int(rng.integers(2, 9))
        W = (rng.random((n, n)) < 0.8).astype(float)
        W = np.triu(W, 1)
        W = W + W.T
        if np.any(W.sum(axis=1) == 0):
            continue
        g = Network.from_weights(sp.csr_matrix(W))
        t = rng.uniform(0.01, 0.99, n)  # interior: markers map differently
        a0 = (rng.random(n) < 0.5).astype(float)
        low = lower_dynamics(g, shocks_of(t), a0)
        mirrored = upper_dynamics(g, shocks_of(1.0 - t), 1.0 - a0)
        assert np.array_equal(low.final_profile, 1.0 - mirrored.final_profile)


def test_sandwich_is_equilibrium(rng):
    # lower dynamics from the upper limit lands on an equilibrium between
    # the one-sided limits.
    for _ in range(30):
        g, P, shocks = random_instance(rng)
        a0 = initial_profile(P, 0.3, shocks, seed=1) if P.eval_left(0.3) <= 0.3 else np.zeros(g.n)
        up = upper_dynamics(g, shocks, a0)
        down = lower_dynamics(g, shocks, up.final_profile)
        mid = down.final_profile
        assert is_equilibrium(g, shocks, mid, "lower")
        low_limit = lower_dynamics(g, shocks, a0).final_profile
        assert np.all(mid <= up.final_profile + 1e-12)
        assert np.all(mid >= low_limit - 1e-12)


# ---------------------------------------------------------- initial profile


def test_initial_profile_atom_probability():
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    # mass below x*=0.5 is 0.3, atom mass 0.4; randomization makes the
    # expectation exactly x*.
    t = np.array([0.0, 0.5, 0.5, math.inf])
    shocks = shocks_of(t)
    counts = []
    for seed in range(4000):
        a = initial_profile(P, 0.5, shocks, seed=seed)
        assert a[0] == 1.0 and a[3] == 0.0
        counts.append(a[1] + a[2])
    # p = (0.5 - 0.3) / 0.4 = 0.5.
    assert abs(np.mean(counts) / 2.0 - 0.5) <= 0.03


def test_initial_profile_mean_matches_x_star(rng):
    # E a_i^0 = x* exactly; empirical mean concentrates there.
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    dist = ThresholdDist(P=P)
    n = 40_000
    shocks = sample_shocks(dist, n, seed=77)
    a = initial_profile(P, 0.5, shocks, seed=78)
    assert abs(a.mean() - 0.5) <= 3.0 / math.sqrt(n)


def test_initial_profile_no_atom_deterministic(rng):
    n = 64
    pos = np.arange(n) / n
    vals = (np.arange(n) + 0.5) / n
    P = StepFn.from_grid(pos.tolist(), vals.tolist())
    dist = ThresholdDist(P=P)
    shocks = sample_shocks(dist, 10_000, seed=5)
    x_star = 0.37  # not a breakpoint: no atom
    a1 = initial_profile(P, x_star, shocks, seed=1)
    a2 = initial_profile(P, x_star, shocks, seed=2)
    assert np.array_equal(a1, a2)
    assert abs(a1.mean() - x_star) <= 3.0 / math.sqrt(10_000)


def test_initial_profile_all_below():
    # A draw in which every threshold lands below x* gives all ones.
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    shocks = shocks_of([0.0, 0.0, 0.0])
    a = initial_profile(P, 0.5, shocks, seed=0)
    assert np.array_equal(a, [1.0, 1.0, 1.0])


def test_initial_profile_rejects_left_mass_above():
    P = StepFn.constant(1.0)
    with pytest.raises(ValueError):
        initial_profile(P, 0.5, shocks_of([0.0, 0.0]), seed=0)


# ------------------------------------------------------- extremal equilibria


def test_extremal_two_node():
    g = two_node()
    largest, smallest = extremal_equilibria(g, shocks_of([0.5, 0.5]))
    assert np.array_equal(largest, [1.0, 1.0])
    assert np.array_equal(smallest, [0.0, 0.0])


def test_extremal_all_dominant_zero():
    g = two_node()
    largest, smallest = extremal_equilibria(g, shocks_of([math.inf, math.inf]))
    assert np.array_equal(largest, [0.0, 0.0])
    assert np.array_equal(smallest, [0.0, 0.0])


def test_extremal_matches_enumeration(rng):
    for _ in range(200):
        g, P, shocks = random_instance(rng, n_max=8)
        largest, smallest = extremal_equilibria(g, shocks)
        upper_all = enumerate_equilibria(g, shocks, "upper")
        lower_all = enumerate_equilibria(g, shocks, "lower")
        assert upper_all.size and lower_all.size
        assert np.array_equal(largest, upper_all.max(axis=0))
        assert np.array_equal(smallest, lower_all.min(axis=0))


# --------------------------------------------------------------- enumeration


def test_enumerate_two_node_indifferent():
    g = two_node()
    eqs = enumerate_equilibria(g, shocks_of([0.5, 0.5]), "upper")
    assert {tuple(e) for e in eqs} == {(0.0, 0.0), (1.0, 1.0)}


def test_enumerate_dominant_one_excludes_zeros():
    g = complete_graph(3)
    eqs = enumerate_equilibria(g, shocks_of([0.0, 0.0, 0.0]), "upper")
    assert (1.0, 1.0, 1.0) in {tuple(e) for e in eqs}
    assert (0.0, 0.0, 0.0) not in {tuple(e) for e in eqs}


def test_enumerate_mixed_thresholds():
    g = two_node()
    eqs = enumerate_equilibria(g, shocks_of([0.4, 0.6]), "upper")
    assert {tuple(e) for e in eqs} == {(0.0, 0.0), (1.0, 1.0)}


def test_enumerate_size_guard():
    g = complete_graph(21)
    with pytest.raises(ValueError):
        enumerate_equilibria(g, shocks_of(np.full(21, 0.5)), "upper")


# ---------------------------------------------------------------- capacities


def test_capacity_simple_basic():
    g = two_node()
    assert capacity_simple(g, np.array([1.0, 0.0])) == 1.0
    assert capacity_simple(g, np.array([1.0, 1.0])) == 0.0
    assert capacity_simple(g, np.array([0.0, 0.0])) == 0.0


def test_capacity_simple_complete_four():
    g = complete_graph(4)
    assert capacity_simple(g, np.array([1.0, 1.0, 0.0, 0.0])) == 4.0


def test_capacity_constant_zero(rng):
    g = complete_graph(5)
    assert capacity(g, np.full(5, 0.4)) == 0.0


def test_capacity_two_node_unit():
    g = two_node()
    assert capacity(g, np.array([1.0, 0.0])) == 1.0


def test_capacity_equals_simple_on_pure(rng):
    for _ in range(100):
        g, P, shocks = random_instance(rng, n_max=9)
        a = (rng.random(g.n) < 0.5).astype(float)
        assert abs(capacity(g, a) - capacity_simple(g, a)) <= 1e-12


def test_trace_capacities_match_recomputation(rng):
    for _ in range(20):
        g, P, shocks = random_instance(rng, n_max=8)
        a0 = (rng.random(g.n) < 0.3).astype(float)
        tr = upper_dynamics(g, shocks, a0, P=P)
        a = a0.copy()
        for step in tr.steps:
            a[step.agent] = 1.0
            assert abs(step.capacity_simple - capacity_simple(g, a)) <= 1e-9
            beta = neighborhood_fractions(g, a)
            assert abs(step.capacity - capacity(g, P.eval_array(beta))) <= 1e-9


# ---------------------------------------------------------------- main bound


def test_audit_zero_step_trace():
    g = two_node()
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    shocks = shocks_of([0.5, 0.5])
    a0 = initial_profile(P, 0.5, shocks, seed=3)
    tr = upper_dynamics(g, shocks, a0, P=P)
    audit = audit_main_bound(g, shocks, P, 0.5, tr)
    assert audit.satisfied
    assert audit.cross_term_A == 0.0 or tr.n_steps > 0


def test_audit_two_node_hand_replay():
    # t = (0.4, 0.6), a0 = (1, 0): agent 1 flips once.  All five terms of
    # the audit recomputed by hand for P = {0.3 on [0,0.5), 0.7 on [0.5,1]}.
    g = two_node()
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    x_star = 0.5
    shocks = shocks_of([0.4, 0.6])
    a0 = np.array([1.0, 0.0])
    tr = upper_dynamics(g, shocks, a0, P=P)
    assert tr.n_steps == 1 and tr.steps[0].agent == 1
    audit = audit_main_bound(g, shocks, P, x_star, tr)
    # Hand replay: beta^0 = (0, 1), p^0 = (P(0), P(1)) = (0.3, 0.7).
    # F(p0) = (0.3 - 0.7)^2 = 0.16.
    assert audit.capacity0 == pytest.approx(0.16, abs=1e-12)
    # After the flip: beta^1 = (1, 1), p^1 = (0.7, 0.7).
    # A = sum_i dp_i * [ (g beta^t - (Wp)^t)_i + (g beta^{t+1} - (Wp)^{t+1})_i ]
    #   only agent 0 changes p: dp_0 = 0.4;
    #   s=t:   g_0 beta_0^t - p_1^t = 0*? ... recomputed numerically below.
    a = a0.copy()
    beta_t = neighborhood_fractions(g, a)
    p_t = P.eval_array(beta_t)
    a[1] = 1.0
    beta_n = neighborhood_fractions(g, a)
    p_n = P.eval_array(beta_n)
    dp = p_n - p_t
    W = g.weights
    A_hand = float(
        np.dot(dp, (g.degrees * beta_t - W @ p_t) + (g.degrees * beta_n - W @ p_n))
    )
    assert audit.cross_term_A == pytest.approx(A_hand, abs=1e-12)
    # beta deviation: 2 * sum g_i |beta_i^0 - 0.5| = 2 * (0.5 + 0.5) = 2.
    assert audit.beta_deviation == pytest.approx(2.0, abs=1e-12)
    # fineness term: 2 * d(g) * sum g_i = 2 * 1 * 2 = 4.
    assert audit.fineness_term == pytest.approx(4.0, abs=1e-12)
    from netcoord.stepfn import loss_L

    lhs_hand = 2.0 * sum(g.degrees[i] * loss_L(P, x_star, float(p_n[i])) for i in range(2))
    assert audit.lhs == pytest.approx(lhs_hand, abs=1e-12)
    assert audit.satisfied


def test_audit_random_lattice_runs(rng):
    # The inequality is deterministic given the trace: must hold always.
    g = lattice(LatticeSpec(M=20, m=2))
    for k in range(10):
        P = random_stepfn(rng)
        from netcoord.stepfn import ru_dominant

        maximizers, _ = ru_dominant(P)
        x_star = maximizers[-1]
        if P.eval_left(x_star) > x_star:
            continue
        dist = ThresholdDist(P=P)
        shocks = sample_shocks(dist, g.n, seed=1000 + k)
        a0 = initial_profile(P, x_star, shocks, seed=k)
        tr = upper_dynamics(g, shocks, a0, P=P)
        audit = audit_main_bound(g, shocks, P, x_star, tr)
        assert audit.satisfied


# ----------------------------------------------------- capacity decrement


def test_decrement_vacuous_without_flips():
    g = two_node()
    s = shocks_of([0.7, 0.7])
    tr = upper_dynamics(g, s, np.zeros(2))
    assert capacity_decrement_check(g, s, tr)


def test_decrement_boundary_flip():
    # A flip at beta exactly alpha decrements by exactly (2 alpha - 1) g_i.
    g = complete_graph(11)
    alpha = 0.7
    t = np.full(11, alpha)
    s = shocks_of(t)
    a0 = np.zeros(11)
    a0[:7] = 1.0  # beta of the others: 7/10 = alpha exactly
    tr = upper_dynamics(g, s, a0)
    assert tr.n_steps > 0
    assert capacity_decrement_check(g, s, tr)
    first = tr.steps[0]
    d_f0 = g.degrees[first.agent] * (1.0 - 2.0 * first.beta_before)
    assert d_f0 == pytest.approx(-(2 * alpha - 1) * g.degrees[first.agent], abs=1e-12)


def test_decrement_many_lattice_runs(rng):
    g = lattice(LatticeSpec(M=12, m=2))
    alpha = 0.7
    s = shocks_of(np.full(g.n, alpha))
    ok = 0
    for k in range(50):
        rng_local = np.random.default_rng(k)
        a0 = (rng_local.random(g.n) < 0.75).astype(float)
        tr = upper_dynamics(g, s, a0)
        ok += capacity_decrement_check(g, s, tr)
    assert ok == 50


def test_decrement_rejects_nonconstant():
    g = two_node()
    s = shocks_of([0.6, 0.7])
    tr = upper_dynamics(g, s, np.zeros(2))
    with pytest.raises(ValueError):
        capacity_decrement_check(g, s, tr)


# -------------------------------------------------------------- trace export


def test_trace_jsonl_round_trip_fields():
    import json as _json

    g = two_node()
    P = StepFn(base=0.3, steps=((0.5, 0.7),))
    tr = upper_dynamics(g, shocks_of([0.4, 0.6]), np.array([1.0, 0.0]), P=P)
    lines = trace_to_jsonl(tr).splitlines()
    assert len(lines) == 1
    rec = _json.loads(lines[0])
    assert set(rec) == {"t", "agent", "beta_before", "F0", "F"}
    assert rec["agent"] == 1
