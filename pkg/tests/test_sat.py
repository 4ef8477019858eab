from collections import defaultdict
from itertools import product

import numpy as np
import pytest

from varisk.mdp import (DeterministicPolicy, MarkovRewardProcess, Mdp, enumerate_policies,
                        induce_chain, make_policy, validate_mdp)
from varisk.risk import return_stats
from varisk.sat import NullState, TransitState, lift_policy, sat_chain, sat_transform_mdp

from conftest import oracle_moments, random_chain, random_mdp


def chain_mdp(split=False):
    """Two states, one action, full support; optionally a {0,1} reward split on 0->1."""
    rewards = {(0, 0, 0): ([1.0], [1.0]), (0, 0, 1): ([2.0], [1.0]),
               (1, 0, 0): ([3.0], [1.0]), (1, 0, 1): ([4.0], [1.0])}
    if split:
        rewards[(0, 0, 1)] = ([0.0, 1.0], [0.3, 0.7])
    P = [np.array([[0.4, 0.6]]), np.array([[0.5, 0.5]])]
    return Mdp([0, 1], [["a"], ["a"]], P, rewards, [0.5, 0.5], 0.9)


def test_two_state_count():
    aug = sat_transform_mdp(chain_mdp())
    assert len(aug.states) == 6
    assert sum(isinstance(s, NullState) for s in aug.states) == 2
    assert validate_mdp(aug.mdp).ok


def test_degenerate_rewards_one_quadruple_per_edge(rng):
    m = random_mdp(rng, 3, 2, n_rewards=1, sparse=True)
    aug = sat_transform_mdp(m)
    n_edges = sum(int((m.transition[x][a] > 0).sum())
                  for x in range(3) for a in range(len(m.actions[x])))
    assert sum(isinstance(s, TransitState) for s in aug.states) == n_edges


def test_reward_split_mass():
    aug = sat_transform_mdp(chain_mdp(split=True))
    k0 = aug.states.index(TransitState(0, 0, 1, 0.0))
    k1 = aug.states.index(TransitState(0, 0, 1, 1.0))
    src = aug.states.index(NullState(0))
    row = aug.mdp.transition[src][0]
    assert row[k0] == pytest.approx(0.6 * 0.3, abs=1e-15)
    assert row[k1] == pytest.approx(0.6 * 0.7, abs=1e-15)
    assert aug.reward[k0] == 0.0 and aug.reward[k1] == 1.0


def test_augmented_chain_invariants(rng):
    for _ in range(10):
        c = random_chain(rng, 3, 2)
        a = sat_chain(c)
        assert np.allclose(a.P.sum(1), 1.0, atol=1e-12, rtol=0)
        for k, s in enumerate(a.states):
            if isinstance(s, NullState):
                assert a.reward[k] == 0.0 and a.initial[k] == c.initial[s.x]
            else:
                assert a.reward[k] == s.i and a.initial[k] == 0.0
        # every state has incoming mass
        incoming = a.initial + a.P.sum(0)
        assert (incoming > 0).all()


def test_self_loop_chain():
    c = MarkovRewardProcess((0,), np.array([[1.0]]), {(0, 0): ([1.0], [1.0])}, np.array([1.0]), 0.9)
    a = sat_chain(c)
    assert a.states == (NullState(0), TransitState(0, None, 0, 1.0))
    assert a.P.tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_deterministic_rewards_reindex(rng):
    c = random_chain(rng, 3, 1)
    a = sat_chain(c)
    for k, s in enumerate(a.states):
        if isinstance(s, TransitState):
            assert a.reward[k] == c.rewards[(s.x, s.y)][0][0]


def _prefix_law_original(c, T):
    law = defaultdict(float)
    for x0 in range(c.n_states):
        stack = [(x0, c.initial[x0], ())]
        while stack:
            x, p, seq = stack.pop()
            if p == 0:
                continue
            if len(seq) == T:
                law[seq] += p
                continue
            for y in range(c.n_states):
                vals, probs = c.rewards[(x, y)]
                for v, q in zip(vals, probs):
                    stack.append((y, p * c.P[x, y] * q, seq + (float(v),)))
    return law


def _prefix_law_augmented(a, T):
    law = defaultdict(float)
    n = len(a.states)
    for path in product(range(n), repeat=T + 1):
        p = a.initial[path[0]]
        for s, t in zip(path, path[1:]):
            p *= a.P[s, t]
        if p > 0:
            assert a.reward[path[0]] == 0.0
            law[tuple(float(a.reward[s]) for s in path[1:])] += p
    return law


def test_prefix_law_preserved(rng):
    for n_states, n_rewards in [(1, 2), (2, 2), (3, 1), (2, 1)]:
        c = random_chain(rng, n_states, n_rewards)
        lo, la = _prefix_law_original(c, 3), _prefix_law_augmented(sat_chain(c), 3)
        assert lo.keys() == la.keys()
        for k in lo:
            assert abs(lo[k] - la[k]) <= 1e-12


def test_return_scaling(rng):
    for _ in range(20):
        c = random_chain(rng, int(rng.integers(1, 5)), int(rng.integers(1, 3)),
                         gamma=float(rng.uniform(0.5, 0.97)))
        a = sat_chain(c)
        g = c.gamma
        # raw augmented moments straight from the augmented chain
        aug_mrp = MarkovRewardProcess(
            a.states, a.P, {(i, j): ([a.reward[i]], [1.0]) for i in range(len(a.states))
                            for j in range(len(a.states))}, a.initial, g)
        E_aug, V_aug = oracle_moments(aug_mrp)
        E, V = oracle_moments(c)
        assert E_aug == pytest.approx(g * E, rel=1e-9, abs=1e-12)
        assert V_aug == pytest.approx(g * g * V, rel=1e-9, abs=1e-12)
        sat = return_stats(c, "sat")
        assert sat.mean == pytest.approx(E, rel=1e-9, abs=1e-12)
        assert sat.variance == pytest.approx(V, rel=1e-9, abs=1e-12)


class TestLift:
    def test_constant_policy(self):
        m = chain_mdp(split=True)
        aug = sat_transform_mdp(m)
        pi = lift_policy(make_policy(m, [0, 0]), m, aug)
        assert set(pi.choices) == {0}

    def test_acts_by_target(self):
        P = [np.array([[0.5, 0.5]]), np.array([[0.2, 0.8], [0.9, 0.1]])]
        rewards = {(x, a, y): ([float(x + y)], [1.0]) for x, a in [(0, 0), (1, 0), (1, 1)]
                   for y in range(2)}
        m = Mdp([0, 1], [["a"], ["a", "b"]], P, rewards, [1.0, 0.0], 0.9)
        aug = sat_transform_mdp(m)
        pi = make_policy(m, [0, 1])
        lifted = lift_policy(pi, m, aug)
        for s, c in zip(aug.states, lifted.choices):
            assert c == pi.choices[s.target]
        assert lifted.choices[aug.states.index(NullState(0))] == 0
        assert all(c == 1 for s, c in zip(aug.states, lifted.choices) if s.target == 1)

    def test_lifted_chain_moments_match(self, rng):
        m = random_mdp(rng, 3, 2)
        aug = sat_transform_mdp(m)
        for pi in enumerate_policies(m):
            c = induce_chain(m, pi)
            ac = induce_chain(aug.mdp, lift_policy(pi, m, aug))
            E, V = oracle_moments(c)
            Ea, Va = oracle_moments(ac)
            assert Ea == pytest.approx(m.gamma * E, rel=1e-9)
            assert Va == pytest.approx(m.gamma ** 2 * V, rel=1e-9)

    def test_unknown_target(self):
        m = chain_mdp()
        aug = sat_transform_mdp(m)
        small = Mdp([0], [["a"]], [np.array([[1.0]])], {(0, 0, 0): ([1.0], [1.0])}, [1.0], 0.9)
        with pytest.raises(ValueError):
            lift_policy(DeterministicPolicy((0,), 0), small, aug)
