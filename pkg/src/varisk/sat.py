"""State-augmentation transformation (SAT).

Turns a model whose reward is stochastic and attached to transitions into
one whose reward is a deterministic function of the state.  Each reachable
"situation" ``(x, a, y, i)`` (left ``x`` by action ``a``, landed in ``y``,
collected reward ``i``) becomes a state carrying reward ``i``; one null
state per initial state carries reward 0 and starts the process.

Because the null step pays nothing and the first real reward arrives one
step later, the augmented return equals ``gamma`` times the original
return in law.  :func:`varisk.risk.return_stats` undoes that shift.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .mdp import (DeterministicPolicy, MarkovRewardProcess, Mdp, PolicyMismatchError,
                  check_policy, policy_index)


@dataclass(frozen=True)
class NullState:
    x: Any

    @property
    def target(self):
        return self.x

    def to_json(self):
        return {"null": self.x}


@dataclass(frozen=True)
class TransitState:
    """Quadruple ``(x, a, y, i)``; ``a`` is ``None`` for chain-level augmentation."""

    x: Any
    a: Any
    y: Any
    i: float

    @property
    def target(self):
        return self.y

    def to_json(self):
        return {"x": self.x, "a": self.a, "y": self.y, "i": self.i}


@dataclass(frozen=True)
class AugmentedMdp:
    """Augmented model: ``mdp`` has degenerate rewards equal to ``reward[x]``.

    States of ``mdp`` are :class:`NullState` / :class:`TransitState` objects
    whose ``x``/``y`` fields are dense indices into the original MDP.
    """

    mdp: Mdp
    reward: np.ndarray
    origin: Mdp

    @property
    def states(self) -> tuple:
        return self.mdp.states


@dataclass(frozen=True)
class AugmentedChain:
    states: tuple
    P: np.ndarray
    reward: np.ndarray
    initial: np.ndarray
    gamma: float

    @property
    def null_indices(self) -> np.ndarray:
        return np.array([k for k, s in enumerate(self.states) if isinstance(s, NullState)],
                        dtype=np.int64)


def _reachable(n: int, start: np.ndarray, succ) -> list[int]:
    seen = set(int(x) for x in np.flatnonzero(start > 0))
    stack = sorted(seen)
    while stack:
        x = stack.pop()
        for y in succ(x):
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return sorted(seen)


def sat_transform_mdp(m: Mdp) -> AugmentedMdp:
    n = m.n_states

    live = _reachable(
        n, m.initial, lambda x: [int(y) for y in np.flatnonzero(m.transition[x].sum(0) > 0)])
    states: list = [NullState(x) for x in range(n) if m.initial[x] > 0]
    weights: list[float] = []
    # transit states grouped by the (state, action) they leave from
    by_sa: dict[tuple[int, int], list[int]] = {}
    for y in live:
        for a in range(len(m.actions[y])):
            row = m.transition[y][a]
            for z in np.flatnonzero(row > 0):
                vals, probs = m.reward_law(y, a, int(z))
                for v, q in zip(vals, probs):
                    w = row[z] * q
                    if w > 0:
                        by_sa.setdefault((y, a), []).append(len(states))
                        states.append(TransitState(y, a, int(z), float(v)))
                        weights.append(w)
    n_null = sum(isinstance(s, NullState) for s in states)
    w_all = np.concatenate([np.zeros(n_null), np.array(weights)])
    N = len(states)
    actions, transition = [], []
    for s in states:
        t = s.target
        acts = m.actions[t]
        block = np.zeros((len(acts), N))
        for a in range(len(acts)):
            cols = by_sa.get((t, a), [])
            block[a, cols] = w_all[cols]
        actions.append(acts)
        transition.append(block)
    reward = np.array([0.0 if isinstance(s, NullState) else s.i for s in states])
    initial = np.array([m.initial[s.x] if isinstance(s, NullState) else 0.0 for s in states])
    rewards = {}
    for k in range(N):
        for a in range(len(actions[k])):
            for z in np.flatnonzero(transition[k][a] > 0):
                rewards[(k, a, int(z))] = (np.array([reward[k]]), np.array([1.0]))
    aug = Mdp(tuple(states), actions, transition, rewards, initial, m.gamma)
    return AugmentedMdp(aug, reward, m)


def lift_policy(pi: DeterministicPolicy, m: Mdp, m_aug: AugmentedMdp) -> DeterministicPolicy:
    """Act in every augmented state as ``pi`` acts in that state's target."""
    check_policy(m, pi)
    choices = []
    for s in m_aug.states:
        t = s.target
        if not isinstance(t, (int, np.integer)) or not 0 <= t < m.n_states:
            raise PolicyMismatchError(f"augmented state {s!r} references unknown state")
        choices.append(pi.choices[t])
    return DeterministicPolicy(tuple(choices), policy_index(m_aug.mdp, choices))


def sat_chain(mrp: MarkovRewardProcess) -> AugmentedChain:
    P = mrp.P
    n = mrp.n_states
    live = _reachable(n, mrp.initial, lambda x: [int(y) for y in np.flatnonzero(P[x] > 0)])
    states: list = [NullState(x) for x in range(n) if mrp.initial[x] > 0]
    n_null = len(states)
    cols_of: dict[int, list[int]] = {}
    weights: list[float] = []
    for y in live:
        for z in np.flatnonzero(P[y] > 0):
            vals, probs = mrp.rewards[(y, int(z))]
            for v, q in zip(vals, probs):
                w = P[y, z] * q
                if w > 0:
                    cols_of.setdefault(y, []).append(len(states))
                    states.append(TransitState(y, None, int(z), float(v)))
                    weights.append(w)
    w_all = np.concatenate([np.zeros(n_null), np.array(weights)])
    N = len(states)
    Pa = np.zeros((N, N))
    targets = np.array([s.target for s in states])
    for y, cols in cols_of.items():
        rows = np.flatnonzero(targets == y)
        Pa[np.ix_(rows, cols)] = w_all[cols]
    reward = np.array([0.0 if isinstance(s, NullState) else s.i for s in states])
    initial = np.zeros(N)
    initial[:n_null] = [mrp.initial[s.x] for s in states[:n_null]]
    return AugmentedChain(tuple(states), Pa, reward, initial, mrp.gamma)
