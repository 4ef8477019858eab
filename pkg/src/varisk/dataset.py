"""Synthetic labelled datasets: sample an inventory instance, solve it, record.

Row ``i`` draws from its own RNG stream keyed by ``(seed, i)``, so the
output depends only on the configuration, never on worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .inventory import (InventoryParams, allowable_actions, build_inventory_mdp,
                        feature_names, feature_vector, inventory_states, sample_params)
from .mdp import DeterministicPolicy
from .risk import RiskReport, RiskSpec, optimize, ratio_gt, var_threshold

LABEL_MODES = ("actions", "index")


class DecodeError(ValueError):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = None if raw is None else np.asarray(raw, float)


class ResampleExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n: int
    M: int = 2
    gamma: float = 0.95
    q: float = 0.0
    seed: int = 0
    label_mode: str = "actions"
    max_resample_attempts: int = 100
    maximize: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.max_resample_attempts < 1:
            raise ValueError("max_resample_attempts must be >= 1")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        if self.M < 1:
            raise ValueError("M must be >= 1")

    @classmethod
    def from_dict(cls, doc) -> "GenConfig":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


class LabelCodec:
    """Encode ``(rho, policy)`` as a numeric vector for an inventory MDP of capacity ``M``.

    ``actions`` mode: ``[rho, k1(s_0), k2(s_0), ..., k1(s_K), k2(s_K)]``.
    ``index`` mode: ``[rho, canonical_index]``.
    """

    def __init__(self, M: int, mode: str = "actions"):
        if mode not in LABEL_MODES:
            raise ValueError(f"mode must be one of {LABEL_MODES}")
        self.M = M
        self.mode = mode
        self.states = inventory_states(M)
        self.actions = [allowable_actions(s, M) for s in self.states]
        self._lookup = [{a: k for k, a in enumerate(acts)} for acts in self.actions]
        self.radices = [len(a) for a in self.actions]
        self.n_policies = math.prod(self.radices)

    def __eq__(self, other):
        return isinstance(other, LabelCodec) and (self.M, self.mode) == (other.M, other.mode)

    def __repr__(self):
        return f"LabelCodec(M={self.M}, mode={self.mode!r})"

    @property
    def width(self) -> int:
        return 1 + (2 * len(self.states) if self.mode == "actions" else 1)

    def label_names(self) -> list[str]:
        if self.mode == "index":
            return ["policy_index"]
        return [f"k{n}_{i}_{j}" for i, j in self.states for n in (1, 2)]

    def index_of(self, choices) -> int:
        idx = 0
        for c, k in zip(choices, self.radices):
            idx = idx * k + c
        return idx

    def policy_of(self, index: int) -> DeterministicPolicy:
        rest, out = index, []
        for k in reversed(self.radices):
            rest, c = divmod(rest, k)
            out.append(c)
        return DeterministicPolicy(tuple(reversed(out)), index)

    def encode(self, pi: DeterministicPolicy, rho: float) -> np.ndarray:
        if self.mode == "index":
            return np.array([rho, float(pi.canonical_index)])
        flat = [float(k) for x, c in enumerate(pi.choices) for k in self.actions[x][c]]
        return np.array([rho, *flat])

    def decode(self, vec) -> tuple[float, DeterministicPolicy]:
        vec = np.asarray(vec, float)
        if vec.shape != (self.width,) or not np.all(np.isfinite(vec)):
            raise DecodeError(f"label vector must be {self.width} finite numbers", vec)
        if self.mode == "index":
            k = math.floor(vec[1] + 0.5)
            if not 0 <= k < self.n_policies:
                raise DecodeError(f"policy index {vec[1]} out of range", vec)
            return float(vec[0]), self.policy_of(k)
        rounded = np.floor(vec[1:] + 0.5).astype(int).reshape(-1, 2)
        choices = []
        for x, (k1, k2) in enumerate(rounded):
            c = self._lookup[x].get((int(k1), int(k2)))
            if c is None:
                raise DecodeError(f"({k1}, {k2}) not allowable in state {self.states[x]}", vec)
            choices.append(c)
        return float(vec[0]), DeterministicPolicy(tuple(choices), self.index_of(choices))

    def policy_key(self, vec):
        """Canonical index of the decoded policy, or ``None`` when undecodable."""
        try:
            return self.decode(vec)[1].canonical_index
        except DecodeError:
            return None


def encode_labels(pi: DeterministicPolicy, rho: float, mode: str, M: int) -> np.ndarray:
    return LabelCodec(M, mode).encode(pi, rho)


def decode_labels(vec, mode: str, M: int) -> tuple[float, DeterministicPolicy]:
    return LabelCodec(M, mode).decode(vec)


def hit_rate(Y_pred, Y_true, codec: LabelCodec) -> float:
    """Fraction of rows whose decoded predicted policy equals the true one."""
    Y_pred = np.atleast_2d(Y_pred)
    Y_true = np.atleast_2d(Y_true)
    if len(Y_true) == 0:
        return math.nan
    hits = sum(codec.policy_key(p) == codec.policy_key(t) for p, t in zip(Y_pred, Y_true))
    return hits / len(Y_true)


def inventory_spec(alpha: float, q: float, maximize: bool = True) -> RiskSpec:
    return RiskSpec(var_threshold(alpha), (ratio_gt(q),), maximize)


def solve_inventory(p: InventoryParams, q: float = 0.0, maximize: bool = True,
                    method: str = "direct") -> RiskReport:
    return optimize(build_inventory_mdp(p), inventory_spec(p.alpha, q, maximize), method)


@dataclass(frozen=True)
class DatasetRow:
    features: np.ndarray
    label_rho: float
    label_policy: np.ndarray
    policy_index: int
    resamples: int


def row_stream(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def generate_row(cfg: GenConfig, i: int) -> DatasetRow:
    rng = row_stream(cfg.seed, i)
    codec = LabelCodec(cfg.M, cfg.label_mode)
    for attempt in range(cfg.max_resample_attempts):
        p = sample_params(rng, cfg.M, cfg.gamma)
        rep = solve_inventory(p, cfg.q, cfg.maximize)
        if not rep.infeasible:
            labels = codec.encode(rep.policy, rep.rho_star)
            return DatasetRow(feature_vector(p), rep.rho_star, labels[1:],
                              rep.policy.canonical_index, attempt)
    raise ResampleExhausted(
        f"row {i}: no feasible instance in {cfg.max_resample_attempts} draws")


def _generate_chunk(args):
    cfg, lo, hi = args
    return [generate_row(cfg, i) for i in range(lo, hi)]


def generate_dataset(cfg: GenConfig, threads: int = 1) -> tuple[list[DatasetRow], dict]:
    """Run the generation loop; returns rows in index order plus a report dict."""
    t0 = time.perf_counter()
    if threads <= 1:
        rows = _generate_chunk((cfg, 0, cfg.n))
    else:
        step = max(1, -(-cfg.n // (threads * 4)))
        chunks = [(cfg, lo, min(cfg.n, lo + step)) for lo in range(0, cfg.n, step)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = [r for part in pool.map(_generate_chunk, chunks) for r in part]
    resamples = [r.resamples for r in rows]
    report = {
        "rows": len(rows),
        "resampled_rows": int(sum(k > 0 for k in resamples)),
        "total_resamples": int(sum(resamples)),
        "max_resamples": int(max(resamples)),
        "wall_time_s": time.perf_counter() - t0,
        "threads": threads,
        "config": cfg.to_dict(),
    }
    return rows, report


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dataset_header(M: int, mode: str) -> list[str]:
    return [*feature_names(M), "rho_star", *LabelCodec(M, mode).label_names()]


def write_dataset(rows, M: int, mode: str, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(dataset_header(M, mode))
    for r in rows:
        w.writerow([_fmt(v) for v in (*r.features, r.label_rho, *r.label_policy)])


def dataset_csv(rows, M: int, mode: str) -> str:
    buf = io.StringIO()
    write_dataset(rows, M, mode, buf)
    return buf.getvalue()


def read_dataset(fh) -> tuple[np.ndarray, np.ndarray, LabelCodec]:
    """Parse a dataset CSV into features ``X``, labels ``Y`` (``rho`` first) and its codec."""
    reader = csv.reader(fh)
    header = next(reader)
    n_demand = sum(1 for h in header if h.startswith("d") and h[1:].isdigit())
    if n_demand < 3 or n_demand % 2 == 0 or "rho_star" not in header:
        raise ValueError("not a dataset CSV: unexpected header")
    M = (n_demand - 1) // 2
    mode = "index" if "policy_index" in header else "actions"
    codec = LabelCodec(M, mode)
    if header != dataset_header(M, mode):
        raise ValueError("dataset header does not match the expected layout")
    data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if data.size == 0:
        raise ValueError("dataset has no rows")
    split = len(feature_names(M))
    return data[:, :split], data[:, split:], codec


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
