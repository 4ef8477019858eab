"""Return moments, risk measures and constrained policy search.

Mean and variance of the discounted return follow Sobel's linear systems

    v   = r + gamma P v
    psi = theta + gamma^2 P psi

on a chain with a deterministic state reward.  Two routes feed them:

* ``sat``: augment the chain (see :mod:`varisk.sat`) and solve there.
* ``direct``: solve on the original states with the edge-law moments.
  Equal in value to ``sat``; much cheaper, so it is the default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .linalg import discounted_solve
from .mdp import MarkovRewardProcess, Mdp, induce_chain, policy_at, policy_table
from .sat import sat_chain

VAR_CLAMP = 1e-9
TIE_RTOL = 1e-9
METHODS = ("direct", "sat")


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MomentPair:
    """Return mean/variance with the per-state vectors that produced them.

    For the ``sat`` route ``v`` and ``psi`` live on the augmented states.
    """

    mean: float
    variance: float
    v: np.ndarray = field(default=None, repr=False)
    psi: np.ndarray = field(default=None, repr=False)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def clamp_variance(V):
    """Zero out roundoff negatives; anything below ``-VAR_CLAMP`` is an error."""
    V = np.asarray(V, dtype=float)
    if np.any(V < -VAR_CLAMP):
        raise NumericalError(f"negative variance {V.min():.3e}")
    return np.where(V < 0, 0.0, V)


# -- Sobel systems ---------------------------------------------------------

def solve_mean(P, r, gamma: float) -> np.ndarray:
    return discounted_solve(np.asarray(P, float), np.asarray(r, float), gamma)


def solve_variance(P, r, gamma: float, v) -> np.ndarray:
    """Conditional return variance for a deterministic state reward ``r``.

    The source term is evaluated as ``sum_y P(x,y) (r_x + gamma v_y - v_x)^2``,
    identical to ``sum_y P(x,y) (r_x + gamma v_y)^2 - v_x^2`` once ``v``
    solves the mean system, but free of cancellation.
    """
    P = np.asarray(P, float)
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    dev = r[..., :, None] + gamma * v[..., None, :] - v[..., :, None]
    theta = np.einsum("...xy,...xy->...x", P, dev**2)
    psi = discounted_solve(P, theta, gamma**2)
    return clamp_variance(psi)


def _direct_vectors(P, mean_e, var_e, gamma):
    """``(v, psi)`` on the original states from edge-law moments.

    ``mean_e``/``var_e`` are ``E[R|x,y]`` and ``Var[R|x,y]``; leading axes
    are batch axes.
    """
    r = np.einsum("...xy,...xy->...x", P, mean_e)
    v = discounted_solve(P, r, gamma)
    dev = mean_e + gamma * v[..., None, :] - v[..., :, None]
    theta = np.einsum("...xy,...xy->...x", P, var_e + dev**2)
    psi = clamp_variance(discounted_solve(P, theta, gamma**2))
    return v, psi


def _mix(mu, v, psi):
    E = v @ mu
    V = psi @ mu + ((v - E[..., None]) ** 2) @ mu
    return E, clamp_variance(V)


def return_stats(mrp: MarkovRewardProcess, method: str = "direct") -> MomentPair:
    if method == "direct":
        mean_e, var_e = mrp.edge_moments
        v, psi = _direct_vectors(mrp.P, mean_e, var_e, mrp.gamma)
        E, V = _mix(mrp.initial, v, psi)
        return MomentPair(float(E), float(V), v, psi)
    if method == "sat":
        chain = sat_chain(mrp)
        g = chain.gamma
        v = solve_mean(chain.P, chain.reward, g)
        psi = solve_variance(chain.P, chain.reward, g, v)
        E, V = _mix(chain.initial, v, psi)
        # the null step delays every reward by one period: Phi_aug = gamma * Phi
        return MomentPair(float(E) / g, float(V) / g**2, v, psi)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def policy_moments(m: Mdp, method: str = "direct") -> tuple[np.ndarray, np.ndarray]:
    """Return mean and variance for every policy, in canonical order."""
    if method == "sat":
        out = [return_stats(induce_chain(m, policy_at(m, k)), "sat")
               for k in range(m.n_policies)]
        return np.array([o.mean for o in out]), np.array([o.variance for o in out])
    if method != "direct":
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    P_sa, mean_sa, var_sa = m.edge_tables
    rows = m.sa_offsets[None, :] + policy_table(m)
    v, psi = _direct_vectors(P_sa[rows], mean_sa[rows], var_sa[rows], m.gamma)
    return _mix(m.initial, v, psi)


# -- normal distribution ---------------------------------------------------

_STD_NORMAL = NormalDist()
_erfc = np.frompyfunc(math.erfc, 1, 1)


def normal_cdf(x):
    """Standard normal CDF via ``erfc``; scalar or array."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    return 0.5 * _erfc(-np.asarray(x, float) / math.sqrt(2.0)).astype(float)


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


def _normal_cdf_at(tau, E, V):
    """``P(Phi <= tau)`` for ``Phi ~ N(E, V)``; a step at ``E`` when ``V == 0``."""
    E = np.asarray(E, float)
    V = np.asarray(V, float)
    sd = np.sqrt(V)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, (tau - E) / np.where(sd > 0, sd, 1.0), 0.0)
    return np.where(sd > 0, normal_cdf(z), (tau >= E).astype(float))


# -- risk measures ---------------------------------------------------------

OBJECTIVES = ("var_threshold", "var_quantile", "exp_utility", "mean_sd", "mean")
CONSTRAINTS = ("ratio_gt", "mean_ge", "var_le")


@dataclass(frozen=True)
class Objective:
    """Law-invariant criterion evaluated from (mean, variance).

    ``var_threshold(alpha)``: largest ``tau`` with ``F(tau) <= 1 - alpha``.
    ``var_quantile(tau)``: ``1 - F(tau)``.
    ``exp_utility(beta)``: second-order estimate ``E + beta/2 V``.
    ``mean_sd(k)``: ``E - k sigma``.
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind != "mean" and (self.param is None or not math.isfinite(self.param)):
            raise ValueError(f"objective {self.kind} needs a finite parameter")
        if self.kind == "var_threshold" and not 0.0 < self.param < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.param}")

    def __call__(self, mean, var):
        mean = np.asarray(mean, float)
        var = np.asarray(var, float)
        if self.kind == "var_threshold":
            return mean + np.sqrt(var) * normal_quantile(1.0 - self.param)
        if self.kind == "var_quantile":
            return 1.0 - _normal_cdf_at(self.param, mean, var)
        if self.kind == "exp_utility":
            return mean + 0.5 * self.param * var
        if self.kind == "mean_sd":
            return mean - self.param * np.sqrt(var)
        return mean + 0.0 * var

    def to_dict(self):
        return {"kind": self.kind, "param": self.param}


def var_threshold(alpha: float) -> Objective:
    return Objective("var_threshold", alpha)


def var_quantile(tau: float) -> Objective:
    return Objective("var_quantile", tau)


def exp_utility(beta: float) -> Objective:
    return Objective("exp_utility", beta)


def mean_sd(k: float) -> Objective:
    return Objective("mean_sd", k)


@dataclass(frozen=True)
class Constraint:
    """Predicate on (mean, variance).

    ``ratio_gt(q)`` means ``E / V > q``; with ``V == 0`` the ratio is taken
    as ``+inf`` when ``E > 0`` and infeasible otherwise.
    """

    kind: str
    bound: float

    def __post_init__(self):
        if self.kind not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.kind!r}")
        if not math.isfinite(self.bound):
            raise ValueError("constraint bound must be finite")

    def __call__(self, mean, var):
        mean = np.asarray(mean, float)
        var = np.asarray(var, float)
        if self.kind == "ratio_gt":
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = mean / np.where(var > 0, var, 1.0)
            return np.where(var > 0, ratio > self.bound, mean > 0)
        if self.kind == "mean_ge":
            return mean >= self.bound
        return var <= self.bound

    def to_dict(self):
        return {"kind": self.kind, "bound": self.bound}


def ratio_gt(q: float) -> Constraint:
    return Constraint("ratio_gt", q)


@dataclass(frozen=True)
class RiskSpec:
    objective: Objective
    constraints: tuple = ()
    maximize: bool = True

    def to_dict(self):
        return {"objective": self.objective.to_dict(),
                "constraints": [c.to_dict() for c in self.constraints],
                "sense": "max" if self.maximize else "min"}

    @classmethod
    def from_dict(cls, doc) -> "RiskSpec":
        obj = doc["objective"]
        cons = tuple(Constraint(c["kind"], float(c["bound"])) for c in doc.get("constraints", []))
        sense = doc.get("sense", "max")
        if sense not in ("max", "min"):
            raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")
        return cls(Objective(obj["kind"], obj.get("param")), cons, sense == "max")


def risk_value(m: MomentPair, measure: Objective) -> float:
    if m.variance < 0:
        raise ValueError("variance must be non-negative")
    return float(measure(m.mean, m.variance))


def var_function(records: Sequence, grid: Iterable[float]) -> list[tuple[float, float]]:
    """Pointwise minimum over policies of the normal return CDF.

    ``records`` holds :class:`MomentPair` objects or ``(mean, variance)`` pairs.
    """
    if len(records) == 0:
        raise ValueError("var_function needs at least one record")
    EV = np.array([(r.mean, r.variance) if isinstance(r, MomentPair) else tuple(r)
                   for r in records], dtype=float)
    grid = np.asarray(list(grid), dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    F = _normal_cdf_at(grid[None, :], EV[:, :1], EV[:, 1:])
    env = F.min(axis=0)
    return [(float(t), float(p)) for t, p in zip(grid, env)]


# -- policy search ---------------------------------------------------------

@dataclass(frozen=True)
class RiskReport:
    """Per-policy evaluation plus the constrained optimum.

    ``policy`` is ``None`` (and ``rho_star`` NaN) when no policy is feasible.
    """

    mean: np.ndarray
    variance: np.ndarray
    objective: np.ndarray
    feasible: np.ndarray
    rho_star: float
    policy: object
    spec: RiskSpec

    @property
    def n_feasible(self) -> int:
        return int(self.feasible.sum())

    @property
    def infeasible(self) -> bool:
        return self.policy is None

    @property
    def status(self) -> str:
        return "infeasible" if self.infeasible else "optimal"

    def to_dict(self, m: Mdp | None = None, records: bool = False) -> dict:
        from .mdp import _to_jsonable

        out = {
            "status": self.status,
            "rho_star": None if self.infeasible else self.rho_star,
            "policy_index": None if self.infeasible else self.policy.canonical_index,
            "n_policies": int(len(self.mean)),
            "n_feasible": self.n_feasible,
            "spec": self.spec.to_dict(),
        }
        if not self.infeasible:
            out["policy_choices"] = list(self.policy.choices)
            k = self.policy.canonical_index
            out["mean"] = float(self.mean[k])
            out["variance"] = float(self.variance[k])
            if m is not None:
                out["policy"] = [_to_jsonable(a) for a in self.policy.actions(m)]
        if records:
            out["records"] = [
                {"index": i, "mean": float(e), "variance": float(v),
                 "objective": float(o), "feasible": bool(f)}
                for i, (e, v, o, f) in enumerate(
                    zip(self.mean, self.variance, self.objective, self.feasible))
            ]
        return out


def select_optimum(objective: np.ndarray, feasible: np.ndarray, maximize: bool = True):
    """Best feasible value and lowest index attaining it, or ``(nan, None)``.

    Values within ``TIE_RTOL`` (relative) of the best count as attaining it:
    policies differing only in unreachable states have equal objectives up to
    roundoff, and the winner must not depend on that roundoff.
    """
    if not feasible.any():
        return math.nan, None
    vals = np.where(feasible, objective, -np.inf if maximize else np.inf)
    best = vals.max() if maximize else vals.min()
    slack = TIE_RTOL * (1.0 + abs(best))
    hit = vals >= best - slack if maximize else vals <= best + slack
    return float(best), int(np.flatnonzero(feasible & hit)[0])


def evaluate(mean, var, spec: RiskSpec) -> tuple[np.ndarray, np.ndarray]:
    obj = np.asarray(spec.objective(mean, var), float)
    feas = np.ones(np.shape(mean), dtype=bool)
    for c in spec.constraints:
        feas &= c(mean, var)
    return obj, feas


def optimize(m: Mdp, spec: RiskSpec, method: str = "direct") -> RiskReport:
    """Exhaustive search over deterministic policies."""
    E, V = policy_moments(m, method)
    obj, feas = evaluate(E, V, spec)
    rho, k = select_optimum(obj, feas, spec.maximize)
    pi = None if k is None else policy_at(m, k)
    return RiskReport(E, V, obj, feas, rho, pi, spec)
