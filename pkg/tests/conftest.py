import math
from statistics import NormalDist

import numpy as np
import pytest

from varisk.mdp import MarkovRewardProcess, Mdp, enumerate_policies, induce_chain


def random_mdp(rng, n_states=3, max_actions=2, n_rewards=2, gamma=0.9, sparse=False):
    """Random MDP with ``n_rewards``-point reward laws on every edge."""
    actions, transition, rewards = [], [], {}
    for x in range(n_states):
        k = int(rng.integers(1, max_actions + 1))
        actions.append(list(range(k)))
        block = rng.dirichlet(np.ones(n_states), size=k)
        if sparse:
            block[block < 0.15] = 0.0
            block[np.arange(k), rng.integers(0, n_states, k)] += 0.1
            block /= block.sum(axis=1, keepdims=True)
        transition.append(block)
        for a in range(k):
            for y in range(n_states):
                vals = np.round(rng.uniform(-3, 5, n_rewards), 3)
                rewards[(x, a, y)] = (vals, rng.dirichlet(np.ones(n_rewards)))
    mu = rng.dirichlet(np.ones(n_states))
    return Mdp(list(range(n_states)), actions, transition, rewards, mu, gamma)


def random_chain(rng, n_states=3, n_rewards=2, gamma=0.9) -> MarkovRewardProcess:
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    rewards = {}
    for x in range(n_states):
        for y in range(n_states):
            vals = np.sort(np.round(rng.uniform(-3, 5, n_rewards), 3))
            rewards[(x, y)] = (vals, rng.dirichlet(np.ones(n_rewards)))
    mu = rng.dirichlet(np.ones(n_states))
    return MarkovRewardProcess(tuple(range(n_states)), P, rewards, mu, gamma)


def oracle_moments(mrp: MarkovRewardProcess):
    """Return mean/variance from the first- and second-moment recursions.

    Independent of the package's solvers: E[Phi^2 | x] = sum_y P(x,y) *
    (E[R^2|x,y] + 2 gamma E[R|x,y] v_y + gamma^2 w_y), solved with numpy.
    """
    n = mrp.n_states
    g = mrp.gamma
    m1 = np.zeros((n, n))
    m2 = np.zeros((n, n))
    for (x, y), (vals, probs) in mrp.rewards.items():
        m1[x, y] = sum(p * v for v, p in zip(vals, probs))
        m2[x, y] = sum(p * v * v for v, p in zip(vals, probs))
    P = mrp.P
    v = np.linalg.solve(np.eye(n) - g * P, (P * m1).sum(1))
    w = np.linalg.solve(np.eye(n) - g * g * P, (P * (m2 + 2 * g * m1 * v[None, :])).sum(1))
    E = mrp.initial @ v
    return float(E), float(mrp.initial @ w - E * E)


def brute_force(m, spec):
    """Exhaustive search with the oracle moments and scalar formulas."""
    nd = NormalDist()
    best, best_k = None, None
    vals = []
    for pi in enumerate_policies(m):
        E, V = oracle_moments(induce_chain(m, pi))
        V = max(V, 0.0)
        kind, par = spec.objective.kind, spec.objective.param
        if kind == "var_threshold":
            val = E + math.sqrt(V) * nd.inv_cdf(1 - par)
        elif kind == "mean_sd":
            val = E - par * math.sqrt(V)
        else:
            val = E + par * V / 2
        ok = all((E / V > c.bound) if V > 0 else E > 0 for c in spec.constraints)
        vals.append((val, ok))
    feas = [v for v, ok in vals if ok]
    if not feas:
        return None, None
    best = max(feas)
    tol = 1e-9 * (1 + abs(best))
    best_k = next(k for k, (v, ok) in enumerate(vals) if ok and v >= best - tol)
    return best, best_k


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register here; the summary prints one line each
ACCEPTANCE = {}


def record_acceptance(key: str, title: str, ok: bool, detail: str) -> None:
    line = f"{key} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[key] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])
