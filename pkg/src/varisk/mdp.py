"""Tabular MDPs with stochastic transition-based rewards.

States and actions are dense integer indices internally; the external
identifiers supplied by the caller live in ``Mdp.states`` and
``Mdp.actions`` and are only used for display and serialization.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable, Iterator, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-12


class PolicyMismatchError(ValueError):
    """A policy does not fit the MDP it is applied to."""


@dataclass(frozen=True)
class Mdp:
    """Finite MDP ``<S, A, J, p, d, mu, gamma>``.

    ``transition[x]`` has shape ``(len(actions[x]), n_states)``.
    ``rewards[(x, a, y)]`` is a pair ``(values, probs)`` giving the reward
    law on the edge; ``x``, ``a`` and ``y`` are dense indices (``a`` indexes
    ``actions[x]``).  Duplicate reward values are merged on construction.
    """

    states: tuple
    actions: tuple
    transition: tuple
    rewards: Mapping[tuple, tuple]
    initial: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(tuple(a) for a in self.actions))
        object.__setattr__(
            self,
            "transition",
            tuple(np.asarray(t, dtype=float).reshape(len(a), len(self.states))
                  for t, a in zip(self.transition, self.actions)),
        )
        object.__setattr__(
            self, "rewards", {k: _merge_support(*v) for k, v in self.rewards.items()}
        )
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def from_outcomes(cls, states, actions, outcomes, initial, gamma) -> "Mdp":
        """Build from ``outcomes[(x, a)] = iterable of (y, reward, prob)``.

        Mass for identical ``(y, reward)`` pairs is summed.
        """
        n = len(states)
        transition = [np.zeros((len(acts), n)) for acts in actions]
        acc: dict[tuple, dict[float, float]] = {}
        for (x, a), items in outcomes.items():
            for y, r, prob in items:
                if prob == 0.0:
                    continue
                transition[x][a, y] += prob
                law = acc.setdefault((x, a, y), {})
                law[r] = law.get(r, 0.0) + prob
        rewards = {}
        for (x, a, y), law in acc.items():
            vals = np.array(list(law.keys()))
            probs = np.array(list(law.values())) / transition[x][a, y]
            rewards[(x, a, y)] = (vals, probs)
        return cls(states, actions, transition, rewards, initial, gamma)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @cached_property
    def n_actions(self) -> np.ndarray:
        return np.array([len(a) for a in self.actions], dtype=np.int64)

    @cached_property
    def n_policies(self) -> int:
        return math.prod(int(k) for k in self.n_actions)

    @cached_property
    def reward_support(self) -> np.ndarray:
        """Sorted array of every reward value with positive mass."""
        vals = [v[p > 0] for v, p in self.rewards.values()]
        if not vals:
            return np.zeros(0)
        return np.unique(np.concatenate(vals))

    def reward_law(self, x: int, a: int, y: int) -> tuple[np.ndarray, np.ndarray]:
        return self.rewards.get((x, a, y), (np.zeros(0), np.zeros(0)))

    @cached_property
    def sa_offsets(self) -> np.ndarray:
        """Row offset of each state's block in the flattened state-action tables."""
        return np.concatenate([[0], np.cumsum(self.n_actions)[:-1]]).astype(np.int64)

    @cached_property
    def edge_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened ``(P, E[R|x,a,y], Var[R|x,a,y])``, one row per state-action."""
        P = np.vstack(self.transition) if self.n_states else np.zeros((0, 0))
        mean = np.zeros_like(P)
        var = np.zeros_like(P)
        for (x, a, y), (vals, probs) in self.rewards.items():
            row = self.sa_offsets[x] + a
            if P[row, y] > 0:
                mean[row, y], var[row, y] = _law_mean_var(vals, probs)
        return P, mean, var


@dataclass(frozen=True)
class DeterministicPolicy:
    """State -> action map stored as per-state local action indices."""

    choices: tuple
    canonical_index: int

    def action_of(self, m: Mdp, x: int) -> Any:
        return m.actions[x][self.choices[x]]

    def actions(self, m: Mdp) -> tuple:
        return tuple(m.actions[x][c] for x, c in enumerate(self.choices))


@dataclass(frozen=True)
class MarkovRewardProcess:
    """Chain induced by fixing a deterministic policy in an MDP."""

    states: tuple
    P: np.ndarray
    rewards: Mapping[tuple, tuple]
    initial: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "rewards", {
            k: (np.asarray(v, dtype=float), np.asarray(p, dtype=float))
            for k, (v, p) in self.rewards.items()})

    @property
    def n_states(self) -> int:
        return len(self.states)

    @cached_property
    def edge_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-edge ``E[R | x, y]`` and ``Var[R | x, y]`` (zero off the support)."""
        mean = np.zeros_like(self.P)
        var = np.zeros_like(self.P)
        for (x, y), (vals, probs) in self.rewards.items():
            mean[x, y], var[x, y] = _law_mean_var(vals, probs)
        return mean, var

    @cached_property
    def max_abs_reward(self) -> float:
        vals = [np.abs(v[p > 0]).max() for v, p in self.rewards.values() if np.any(p > 0)]
        return float(max(vals)) if vals else 0.0


@dataclass(frozen=True)
class Violation:
    kind: str
    coords: tuple
    detail: str = ""

    def __str__(self):
        return f"{self.kind} {self.coords}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_mdp(m: Mdp) -> ValidationReport:
    """Collect every structural violation of ``m``; never raises."""
    out: list[Violation] = []
    n = m.n_states
    if not (0.0 < m.gamma < 1.0):
        out.append(Violation("discount out of range", (), f"gamma={m.gamma}"))
    if len(m.actions) != n or len(m.transition) != n:
        out.append(Violation("shape", (), "actions/transition length differs from states"))
        return ValidationReport(tuple(out))
    for x in range(n):
        if len(m.actions[x]) == 0:
            out.append(Violation("no allowable action", (x,)))
        for a in range(len(m.actions[x])):
            row = m.transition[x][a]
            for y in np.flatnonzero(_out_of_range(row)):
                out.append(Violation("probability out of range", (x, a, int(y)),
                                     f"p={row[y]}"))
            s = float(row.sum())
            if abs(s - 1.0) > PROB_TOL:
                out.append(Violation("transition row", (x, a), f"sum={s!r}"))
            for y in np.flatnonzero(row > 0):
                vals, probs = m.reward_law(x, a, int(y))
                if not np.all(np.isfinite(vals)):
                    out.append(Violation("reward not finite", (x, a, int(y))))
                for j in np.flatnonzero(_out_of_range(probs)):
                    out.append(Violation("probability out of range",
                                         (x, a, int(y), float(vals[j])), f"d={probs[j]}"))
                s = float(probs.sum())
                if abs(s - 1.0) > PROB_TOL:
                    out.append(Violation("reward distribution", (x, a, int(y)),
                                         f"sum={s!r}"))
    mu = m.initial
    if mu.shape != (n,):
        out.append(Violation("shape", (), "initial distribution length"))
    else:
        for x in np.flatnonzero(_out_of_range(mu)):
            out.append(Violation("probability out of range", (int(x),), f"mu={mu[x]}"))
        if abs(float(mu.sum()) - 1.0) > PROB_TOL:
            out.append(Violation("initial distribution", (), f"sum={mu.sum()!r}"))
    return ValidationReport(tuple(out))


def _out_of_range(p: np.ndarray) -> np.ndarray:
    return (p < -PROB_TOL) | (p > 1 + PROB_TOL) | ~np.isfinite(p)


def induce_chain(m: Mdp, pi: DeterministicPolicy) -> MarkovRewardProcess:
    check_policy(m, pi)
    P = np.vstack([m.transition[x][c] for x, c in enumerate(pi.choices)])
    rewards = {}
    for x, c in enumerate(pi.choices):
        for y in np.flatnonzero(P[x] > 0):
            rewards[(x, int(y))] = m.reward_law(x, c, int(y))
    return MarkovRewardProcess(m.states, P, rewards, m.initial.copy(), m.gamma)


def check_policy(m: Mdp, pi: DeterministicPolicy) -> None:
    if len(pi.choices) != m.n_states:
        raise PolicyMismatchError(
            f"policy covers {len(pi.choices)} states, MDP has {m.n_states}")
    for x, c in enumerate(pi.choices):
        if not 0 <= c < m.n_actions[x]:
            raise PolicyMismatchError(f"action {c} not allowable in state {m.states[x]!r}")


def policy_at(m: Mdp, index: int) -> DeterministicPolicy:
    """Policy at ``index`` in the lexicographic order (first state varies slowest)."""
    if not 0 <= index < m.n_policies:
        raise IndexError(f"policy index {index} outside [0, {m.n_policies})")
    choices = []
    rest = int(index)
    for k in reversed(m.n_actions.tolist()):
        rest, c = divmod(rest, k)
        choices.append(c)
    return DeterministicPolicy(tuple(reversed(choices)), int(index))


def policy_index(m: Mdp, choices: Sequence[int]) -> int:
    pi = DeterministicPolicy(tuple(int(c) for c in choices), 0)
    check_policy(m, pi)
    index = 0
    for c, k in zip(pi.choices, m.n_actions.tolist()):
        index = index * k + c
    return index


def make_policy(m: Mdp, choices: Sequence[int]) -> DeterministicPolicy:
    return DeterministicPolicy(tuple(int(c) for c in choices), policy_index(m, choices))


def enumerate_policies(m: Mdp) -> Iterator[DeterministicPolicy]:
    ranges = [range(int(k)) for k in m.n_actions]
    for i, choices in enumerate(itertools.product(*ranges)):
        yield DeterministicPolicy(choices, i)


def policy_table(m: Mdp) -> np.ndarray:
    """All policies as an ``(n_policies, n_states)`` array of local action indices."""
    dims = tuple(int(k) for k in m.n_actions)
    return np.indices(dims).reshape(len(dims), -1).T.copy()


def _law_mean_var(vals, probs) -> tuple[float, float]:
    mean = float(probs @ vals)
    return mean, float(probs @ (vals - mean) ** 2)


def _merge_support(values, probs) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    uniq, inv = np.unique(values, return_inverse=True)
    if len(uniq) == len(values) and np.all(np.diff(values) > 0):
        return values, probs
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, probs)
    return uniq, merged


# -- JSON ------------------------------------------------------------------

def _to_jsonable(obj):
    if isinstance(obj, tuple):
        return [_to_jsonable(o) for o in obj]
    if hasattr(obj, "to_json"):
        return obj.to_json()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _from_jsonable(obj) -> Hashable:
    if isinstance(obj, list):
        return tuple(_from_jsonable(o) for o in obj)
    if isinstance(obj, dict):
        return tuple(sorted((k, _from_jsonable(v)) for k, v in obj.items()))
    return obj


def mdp_to_dict(m: Mdp) -> dict:
    transitions = []
    for x, block in enumerate(m.transition):
        for a, y in zip(*np.nonzero(block)):
            transitions.append([x, int(a), int(y), float(block[a, y])])
    rewards = []
    for (x, a, y) in sorted(m.rewards):
        vals, probs = m.rewards[(x, a, y)]
        for v, p in zip(vals, probs):
            if p != 0.0:
                rewards.append([x, a, y, float(v), float(p)])
    return {
        "states": [_to_jsonable(s) for s in m.states],
        "actions": [[_to_jsonable(a) for a in acts] for acts in m.actions],
        "transitions": transitions,
        "rewards": rewards,
        "initial": [float(u) for u in m.initial],
        "gamma": m.gamma,
    }


def mdp_from_dict(doc: Mapping) -> Mdp:
    """Inverse of :func:`mdp_to_dict`.  Missing keys raise ``KeyError``."""
    states = [_from_jsonable(s) for s in doc["states"]]
    actions = [[_from_jsonable(a) for a in acts] for acts in doc["actions"]]
    n = len(states)
    transition = [np.zeros((len(acts), n)) for acts in actions]
    for x, a, y, p in doc["transitions"]:
        transition[int(x)][int(a), int(y)] += float(p)
    laws: dict[tuple, tuple[list, list]] = {}
    for x, a, y, v, p in doc["rewards"]:
        vals, probs = laws.setdefault((int(x), int(a), int(y)), ([], []))
        vals.append(float(v))
        probs.append(float(p))
    rewards = {k: (np.array(v), np.array(p)) for k, (v, p) in laws.items()}
    return Mdp(states, actions, transition, rewards, np.array(doc["initial"], float),
               float(doc["gamma"]))


def dumps_mdp(m: Mdp, **kw) -> str:
    return json.dumps(mdp_to_dict(m), **kw)


def loads_mdp(text: str) -> Mdp:
    return mdp_from_dict(json.loads(text))
