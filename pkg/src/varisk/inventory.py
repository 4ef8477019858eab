"""Periodic-review inventory MDP with two suppliers.

U1 is near and reliable (order arrives at once); U2 is cheaper, delivers
after one period and is available with probability ``beta1``.  Unmet
units are independently backlogged (probability ``beta2``, sold at
``p_r - c_b``) or lost (cost ``c_l = p_r - c2``), both settled in the
current period.

Within a period: observe ``(i, j)``, the in-transit ``j`` and the U1
order ``k1`` join the shelf (``stock = i + j + k1``), U2 availability is
drawn, demand is drawn, shortages are split, and the next state is
``(max(0, stock - d), k2 if U2 available else 0)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp import Mdp

SCALAR_RANGES = {
    "p_r": (6.0, 10.0),
    "p_s": (0.0, 2.0),
    "c1": (4.0, 6.0),
    "c2": (1.0, 4.0),
    "c_b": (0.0, 2.0),
    "c_f": (0.0, 2.0),
    "c_h": (0.0, 2.0),
    "beta1": (0.8, 1.0),
    "beta2": (0.0, 1.0),
    "alpha": (0.0, 1.0),
}
SCALAR_FIELDS = tuple(SCALAR_RANGES)


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class InventoryParams:
    M: int
    gamma: float
    p_r: float
    p_s: float
    c1: float
    c2: float
    c_b: float
    c_f: float
    c_h: float
    beta1: float
    beta2: float
    alpha: float
    f_D: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "f_D", tuple(float(v) for v in self.f_D))

    @property
    def c_l(self) -> float:
        return self.p_r - self.c2

    def validate(self) -> None:
        if int(self.M) != self.M or self.M < 1:
            raise InvalidParams(f"M must be a positive integer, got {self.M}")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidParams(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in SCALAR_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise InvalidParams(f"{name} is not finite")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParams(f"alpha must lie in (0, 1), got {self.alpha}")
        f = np.asarray(self.f_D)
        if f.shape != (2 * self.M + 1,):
            raise InvalidParams(f"f_D needs {2 * self.M + 1} entries, got {f.size}")
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-12:
            raise InvalidParams("f_D must be a probability vector")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["f_D"] = list(self.f_D)
        return d

    @classmethod
    def from_dict(cls, doc) -> "InventoryParams":
        keys = ("M", "gamma", *SCALAR_FIELDS, "f_D")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise InvalidParams(f"missing fields: {', '.join(missing)}")
        kw = {k: doc[k] for k in keys}
        kw["M"] = int(kw["M"])
        return cls(**kw)


def inventory_states(M: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(M + 1) for j in range(M + 1 - i)]


def allowable_actions(state: tuple[int, int], M: int) -> list[tuple[int, int]]:
    """Order pairs keeping shelf plus pipeline within capacity, ``k1`` outer."""
    i, j = state
    room = M - i - j
    return [(k1, k2) for k1 in range(room + 1) for k2 in range(room - k1 + 1)]


def n_policies(M: int) -> int:
    return math.prod(len(allowable_actions(s, M)) for s in inventory_states(M))


def period_reward(p: InventoryParams, state, action, d: int, b: int, available: bool) -> float:
    """Reward for one period with demand ``d`` and ``b`` backlogged units."""
    i, j = state
    k1, k2 = action
    u = max(0, d - (i + j + k1))
    fixed = p.c_f * ((k1 > 0) + (k2 > 0)) + p.c1 * k1 + p.c2 * k2 + p.c_h * i
    r = p.p_r * (d - u) + (p.p_r - p.c_b) * b - p.c_l * (u - b) - fixed
    if not available:
        r += p.p_s * k2
    return r


def build_inventory_mdp(p: InventoryParams) -> Mdp:
    p.validate()
    M = p.M
    states = inventory_states(M)
    index = {s: k for k, s in enumerate(states)}
    actions = [allowable_actions(s, M) for s in states]
    outcomes = {}
    for x, (i, j) in enumerate(states):
        for a, (k1, k2) in enumerate(actions[x]):
            stock = i + j + k1
            supply = [(True, p.beta1), (False, 1.0 - p.beta1)] if k2 > 0 else [(True, 1.0)]
            items = []
            for available, pa in supply:
                if pa == 0.0:
                    continue
                for d, fd in enumerate(p.f_D):
                    if fd == 0.0:
                        continue
                    u = max(0, d - stock)
                    y = index[(max(0, stock - d), k2 if available else 0)]
                    for b in range(u + 1):
                        pb = math.comb(u, b) * p.beta2**b * (1.0 - p.beta2) ** (u - b)
                        if pb == 0.0:
                            continue
                        r = period_reward(p, (i, j), (k1, k2), d, b, available)
                        items.append((y, r, pa * fd * pb))
            outcomes[(x, a)] = items
    initial = np.zeros(len(states))
    initial[index[(0, 0)]] = 1.0
    return Mdp.from_outcomes(states, actions, outcomes, initial, p.gamma)


def sample_params(rng, M: int, gamma: float = 0.95) -> InventoryParams:
    """Draw one parameter vector; ``rng`` is a seed or ``numpy.random.Generator``.

    Scalars are uniform on their ranges in ``SCALAR_FIELDS`` order, then the
    demand pmf is uniform on the simplex (normalized unit exponentials).
    """
    rng = np.random.default_rng(rng)
    kw = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in SCALAR_RANGES.items()}
    while kw["alpha"] == 0.0:
        kw["alpha"] = float(rng.uniform(0.0, 1.0))
    g = rng.standard_exponential(2 * M + 1)
    return InventoryParams(M=M, gamma=gamma, f_D=tuple(g / g.sum()), **kw)


def feature_names(M: int) -> list[str]:
    return [*SCALAR_FIELDS, *(f"d{k}" for k in range(2 * M + 1))]


def feature_vector(p: InventoryParams) -> np.ndarray:
    return np.array([getattr(p, n) for n in SCALAR_FIELDS] + list(p.f_D))


def params_from_features(vec, M: int, gamma: float = 0.95) -> InventoryParams:
    vec = [float(v) for v in vec]
    if len(vec) != len(SCALAR_FIELDS) + 2 * M + 1:
        raise InvalidParams(f"expected {len(SCALAR_FIELDS) + 2 * M + 1} features, got {len(vec)}")
    kw = dict(zip(SCALAR_FIELDS, vec))
    return InventoryParams(M=M, gamma=gamma, f_D=tuple(vec[len(SCALAR_FIELDS):]), **kw)


def feature_bounds(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Known sampling ranges, used to scale network inputs."""
    lo = [SCALAR_RANGES[n][0] for n in SCALAR_FIELDS] + [0.0] * (2 * M + 1)
    hi = [SCALAR_RANGES[n][1] for n in SCALAR_FIELDS] + [1.0] * (2 * M + 1)
    return np.array(lo), np.array(hi)
