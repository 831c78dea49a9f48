"""scikit-learn compatible regressor over flattened feature rows.

Each row of ``X`` is the dynamic window flattened month by month
(``n_months * 4`` values, columns tmax, tmin, precip, accumulated GDD)
followed by the 65 static slots. Targets are yields in kg/ha. Scaling is
fitted inside :meth:`LSTMYieldRegressor.fit` on the training rows only, so
the estimator can be dropped into pipelines and cross-validation without
leaking held-out statistics.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import N_DYNAMIC, N_STATIC, fit_scaler_arrays
from .nn import NetworkArch, predict
from .training import TrainConfig, fit_network


def pack_features(dynamic, static) -> np.ndarray:
    """Flatten ``(N, n, 4)`` dynamic and ``(N, 65)`` static arrays into rows."""
    dynamic = np.asarray(dynamic, dtype=float)
    static = np.asarray(static, dtype=float)
    return np.hstack([dynamic.reshape(len(dynamic), -1), static])


def unpack_features(X, n_months: int):
    X = np.asarray(X, dtype=float)
    width = n_months * N_DYNAMIC
    if X.shape[1] != width + N_STATIC:
        raise ValueError(f"expected {width + N_STATIC} columns for n_months={n_months}, "
                         f"got {X.shape[1]}")
    return X[:, :width].reshape(len(X), n_months, N_DYNAMIC), X[:, width:]


class LSTMYieldRegressor(RegressorMixin, BaseEstimator):
    """Dual-path LSTM/dense yield regressor.

    Parameters mirror :class:`~yieldcast.training.TrainConfig` and
    :class:`~yieldcast.nn.NetworkArch`; ``validation_fraction`` of the
    training rows (seeded by ``random_state``) is held out for early
    stopping unless ``fit`` receives ``validation_data``.
    """

    def __init__(self, n_months=9, lstm_sizes=(64, 64), static_sizes=(64, 32),
                 head_sizes=(32, 1), noise_sigma=0.3, learning_rate=5e-4, beta1=0.9,
                 beta2=0.999, adam_epsilon=1e-8, batch_size=280, max_epochs=500, patience=50,
                 l2_lambda=1e-5, validation_fraction=0.1, random_state=0):
        self.n_months = n_months
        self.lstm_sizes = lstm_sizes
        self.static_sizes = static_sizes
        self.head_sizes = head_sizes
        self.noise_sigma = noise_sigma
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_epsilon = adam_epsilon
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.l2_lambda = l2_lambda
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            adam_epsilon=self.adam_epsilon, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=min(self.patience, self.max_epochs),
            l2_lambda=self.l2_lambda, noise_sigma=self.noise_sigma,
            seed=int(self.random_state or 0))

    def fit(self, X, y, validation_data=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        dyn, stat = unpack_features(X, self.n_months)
        cfg = self._config()
        if validation_data is None:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must lie in (0, 1) without validation_data")
            rng = np.random.default_rng(cfg.seed)
            perm = rng.permutation(len(y))
            n_val = max(1, int(round(self.validation_fraction * len(y))))
            if n_val >= len(y):
                raise ValueError("not enough rows to hold out a validation set")
            val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
            vd, vs, vy = dyn[val], stat[val], y[val]
            dyn, stat, y = dyn[tr], stat[tr], y[tr]
        else:
            Xv, vy = check_X_y(*validation_data, dtype=np.float64, y_numeric=True)
            vd, vs = unpack_features(Xv, self.n_months)

        self.scaler_ = fit_scaler_arrays(dyn, stat, y)
        s = self.scaler_
        arch = NetworkArch(n=self.n_months, lstm_sizes=self.lstm_sizes,
                           static_sizes=self.static_sizes, head_sizes=self.head_sizes,
                           noise_sigma=self.noise_sigma)
        self.network_, self.history_ = fit_network(
            (s.transform_dynamic(dyn), s.transform_static(stat), s.transform_target(y)),
            (s.transform_dynamic(vd), s.transform_static(vs), s.transform_target(vy)),
            arch, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        dyn, stat = unpack_features(X, self.n_months)
        s = self.scaler_
        pred = predict(self.network_, s.transform_dynamic(dyn), s.transform_static(stat))
        return s.inverse_target(pred)
