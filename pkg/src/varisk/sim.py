"""Monte-Carlo simulation of induced Markov reward processes.

Independent check on the analytic moments: episodes are rolled out to a
truncation horizon chosen so the discarded tail is below ``tail_epsilon``.
Episodes are processed in fixed-size blocks, each with its own RNG stream
keyed by ``(seed, block)``, so results do not depend on how blocks are
scheduled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import MarkovRewardProcess

BLOCK = 50_000


@dataclass(frozen=True)
class SimConfig:
    episodes: int = 200_000
    tail_epsilon: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.tail_epsilon > 0:
            raise ValueError("tail_epsilon must be > 0")


@dataclass(frozen=True)
class SimReport:
    mean: float
    variance: float
    mean_se: float
    variance_se: float
    horizon: int
    episodes: int

    def to_dict(self):
        return asdict(self)


def horizon_for(gamma: float, r_max: float, tail_epsilon: float) -> int:
    """Smallest ``T`` with ``gamma**T * r_max / (1 - gamma) < tail_epsilon``."""
    if r_max == 0:
        return 0
    T = max(0, math.floor(math.log(tail_epsilon * (1 - gamma) / r_max) / math.log(gamma)))
    while gamma**T * r_max / (1 - gamma) >= tail_epsilon:
        T += 1
    while T > 0 and gamma ** (T - 1) * r_max / (1 - gamma) < tail_epsilon:
        T -= 1
    return T


def _inclusive_cdf(w: np.ndarray) -> np.ndarray:
    c = np.cumsum(w)
    last = np.flatnonzero(w > 0)[-1]
    c[last:] = 1.0
    return c


def _outcome_tables(mrp: MarkovRewardProcess):
    """Per state: joint ``(next state, reward)`` outcomes in (y, j) order with their CDF."""
    tables = []
    for x in range(mrp.n_states):
        ys, rs, ws = [], [], []
        for y in np.flatnonzero(mrp.P[x] > 0):
            vals, probs = mrp.rewards[(x, int(y))]
            for v, q in zip(vals, probs):
                if q > 0:
                    ys.append(int(y))
                    rs.append(float(v))
                    ws.append(mrp.P[x, y] * q)
        tables.append((np.array(ys), np.array(rs), _inclusive_cdf(np.array(ws))))
    return tables


def simulate_returns(mrp: MarkovRewardProcess, cfg: SimConfig) -> tuple[np.ndarray, int]:
    """Truncated discounted returns of ``cfg.episodes`` episodes, in block order."""
    T = horizon_for(mrp.gamma, mrp.max_abs_reward, cfg.tail_epsilon)
    tables = _outcome_tables(mrp)
    mu_cdf = _inclusive_cdf(np.asarray(mrp.initial, float))
    out = []
    for b, start in enumerate(range(0, cfg.episodes, BLOCK)):
        n = min(BLOCK, cfg.episodes - start)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(b,)))
        x = np.searchsorted(mu_cdf, rng.random(n), side="right")
        ret = np.zeros(n)
        disc = 1.0
        for _ in range(T):
            u = rng.random(n)
            nxt = np.empty_like(x)
            rew = np.empty(n)
            for s, (ys, rs, cdf) in enumerate(tables):
                idx = np.flatnonzero(x == s)
                if idx.size:
                    k = np.searchsorted(cdf, u[idx], side="right")
                    nxt[idx] = ys[k]
                    rew[idx] = rs[k]
            ret += disc * rew
            disc *= mrp.gamma
            x = nxt
        out.append(ret)
    return np.concatenate(out), T


def _stats(returns: np.ndarray, T: int) -> SimReport:
    n = returns.size
    mean = float(returns.mean())
    dev = returns - mean
    var = float(dev @ dev / (n - 1)) if n > 1 else 0.0
    m4 = float(np.mean(dev**4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / n)
    return SimReport(mean, var, math.sqrt(var / n), var_se, T, n)


def simulate_stats(mrp: MarkovRewardProcess, cfg: SimConfig) -> SimReport:
    returns, T = simulate_returns(mrp, cfg)
    return _stats(returns, T)


def empirical_cdf(mrp: MarkovRewardProcess, cfg: SimConfig, grid) -> list[tuple[float, float]]:
    grid = np.asarray(list(grid), float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    returns, _ = simulate_returns(mrp, cfg)
    returns.sort()
    frac = np.searchsorted(returns, grid, side="right") / returns.size
    return [(float(t), float(f)) for t, f in zip(grid, frac)]
