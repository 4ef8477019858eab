"""scikit-learn compatible wrappers.

``PolicyNetRegressor`` learns features -> (rho*, policy labels);
``ExactPolicySolver`` computes the same map exactly by exhaustive search,
so the two are interchangeable inside pipelines and scoring code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import DecodeError, LabelCodec, hit_rate, solve_inventory
from .inventory import feature_bounds, params_from_features
from .nn import AdamState, adam_step, compute_gradients, forward, init_model, mse


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_hit_rate: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_hit_rate"]
        for k, row in enumerate(zip(self.train_loss, self.val_loss, self.val_hit_rate), 1):
            lines.append(",".join([str(k), *(format(v, ".17g") for v in row)]))
        return "\n".join(lines) + "\n"


class PolicyNetRegressor(RegressorMixin, BaseEstimator):
    """Small relu network trained with Adam on mean squared error.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    epochs, batch_size : int
    learning_rate, beta1, beta2, epsilon : float
        Adam settings.
    validation_fraction : float
        Share of rows held out (fixed split drawn from ``random_state``).
    random_state : int
        Seeds the split, the initial weights and every epoch's shuffle.
    feature_bounds : (lo, hi) or None
        Input scaling range; defaults to the training data's min/max.
    policy_decoder : LabelCodec or None
        When set, the validation hit rate is recorded every epoch.
    """

    def __init__(self, hidden_layer_sizes=(12, 8), epochs=50, batch_size=50,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 validation_fraction=0.2, random_state=0, feature_bounds=None,
                 policy_decoder=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.feature_bounds = feature_bounds
        self.policy_decoder = policy_decoder

    def _split(self, n, rng):
        perm = rng.permutation(n)
        n_val = int(round(self.validation_fraction * n))
        val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        if len(tr) == 0 or (self.validation_fraction > 0 and n_val == 0):
            raise ValueError("empty train or validation split")
        return tr, val

    def fit(self, X, y):
        X, Y = check_X_y(X, y, multi_output=True, y_numeric=True)
        Y = Y.reshape(len(Y), -1).astype(float)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        rng = np.random.default_rng(self.random_state)
        tr, val = self._split(len(X), rng)
        dims = [X.shape[1], *self.hidden_layer_sizes, Y.shape[1]]
        model = init_model(dims, seed=self.random_state)
        if self.feature_bounds is not None:
            lo, hi = (np.asarray(b, float) for b in self.feature_bounds)
        else:
            lo, hi = X[tr].min(axis=0), X[tr].max(axis=0)
        model.x_lo, model.x_hi = lo, np.where(hi > lo, hi, lo + 1.0)
        std = Y[tr].std(axis=0)
        model.y_mean, model.y_std = Y[tr].mean(axis=0), np.where(std > 0, std, 1.0)

        state = AdamState(self.learning_rate, self.beta1, self.beta2, self.epsilon)
        history = TrainHistory()
        for _ in range(self.epochs):
            order = tr[rng.permutation(len(tr))]
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                _, grads = compute_gradients(model, X[idx], Y[idx])
                model, state = adam_step(state, model, grads)
            history.train_loss.append(mse(model, X[tr], Y[tr]))
            history.val_loss.append(mse(model, X[val], Y[val]))
            if self.policy_decoder is not None and len(val):
                pred = model.denormalize_y(forward(model, X[val]))
                history.val_hit_rate.append(hit_rate(pred, Y[val], self.policy_decoder))
            else:
                history.val_hit_rate.append(math.nan)
        self.model_ = model
        self.adam_ = state
        self.history_ = history
        self.train_index_, self.val_index_ = tr, val
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return forward(self.model_, X, denormalize=True)

    def predict_policies(self, X) -> list:
        """Decode each prediction into a :class:`Prediction`."""
        if self.policy_decoder is None:
            raise ValueError("policy_decoder is not set")
        return [decode_prediction(row, self.policy_decoder) for row in self.predict(X)]


@dataclass(frozen=True)
class Prediction:
    rho_hat: float
    policy: object
    error: str | None
    raw: np.ndarray

    def to_dict(self, codec: LabelCodec | None = None) -> dict:
        out = {"rho_hat": self.rho_hat, "raw": [float(v) for v in self.raw]}
        if self.policy is None:
            out["decode_error"] = self.error
        else:
            out["policy_index"] = self.policy.canonical_index
            out["policy_choices"] = list(self.policy.choices)
            if codec is not None:
                out["policy"] = [list(codec.actions[x][c])
                                 for x, c in enumerate(self.policy.choices)]
        return out


def decode_prediction(raw, codec: LabelCodec) -> Prediction:
    raw = np.asarray(raw, float)
    try:
        rho, pi = codec.decode(raw)
        return Prediction(rho, pi, None, raw)
    except DecodeError as exc:
        return Prediction(float(raw[0]), None, str(exc), raw)


class ExactPolicySolver(RegressorMixin, BaseEstimator):
    """Exact features -> labels map by exhaustive policy search.

    Infeasible instances produce a row of NaN.
    """

    def __init__(self, M=2, gamma=0.95, q=0.0, label_mode="actions", maximize=True):
        self.M = M
        self.gamma = gamma
        self.q = q
        self.label_mode = label_mode
        self.maximize = maximize

    def fit(self, X, y=None):
        X = check_array(X)
        n_expected = len(feature_bounds(self.M)[0])
        if X.shape[1] != n_expected:
            raise ValueError(f"expected {n_expected} features for M={self.M}")
        self.codec_ = LabelCodec(self.M, self.label_mode)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "codec_")
        X = check_array(X)
        out = np.full((len(X), self.codec_.width), np.nan)
        for k, row in enumerate(X):
            rep = solve_inventory(params_from_features(row, self.M, self.gamma),
                                  self.q, self.maximize)
            if not rep.infeasible:
                out[k] = self.codec_.encode(rep.policy, rep.rho_star)
        return out


def train(X, Y, validation_fraction=0.2, epochs=50, batch_size=50, seed=0,
          codec: LabelCodec | None = None, hidden=(12, 8), feature_bounds=None,
          learning_rate=1e-3) -> PolicyNetRegressor:
    """Fit a :class:`PolicyNetRegressor`; the model is ``.model_``, history ``.history_``."""
    est = PolicyNetRegressor(hidden_layer_sizes=tuple(hidden), epochs=epochs,
                             batch_size=batch_size, learning_rate=learning_rate,
                             validation_fraction=validation_fraction, random_state=seed,
                             feature_bounds=feature_bounds, policy_decoder=codec)
    return est.fit(X, Y)
