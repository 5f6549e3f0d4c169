"""scikit-learn style wrapper around the conditional U-Net."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .fields import ConditioningInput, FieldState, ParameterError, relative_l2, to_tensor
from .model import (PairDataset, TrainConfig, UNetConfig, build_model, get_params,
                    set_params, theta_tensor, train)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def check_fields_array(X, n_channels: int = 3, multiple: int = 1) -> np.ndarray:
    """Validate an n x C x H x W batch of finite fields with H, W divisible by ``multiple``."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != n_channels:
        raise ValueError(f"expected n x {n_channels} x H x W fields, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty field batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("fields contain NaN or Inf")
    if X.shape[2] % multiple or X.shape[3] % multiple:
        raise ValueError(f"H x W = {X.shape[2]} x {X.shape[3]} not divisible by {multiple}")
    return X


def check_theta(theta, n: int) -> np.ndarray:
    if isinstance(theta, ConditioningInput):
        theta = [theta.as_array()] * n
    elif isinstance(theta, (list, tuple)) and theta and isinstance(theta[0], ConditioningInput):
        theta = [t.as_array() for t in theta]
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if theta.shape == (1, 2) and n > 1:
        theta = np.repeat(theta, n, axis=0)
    if theta.shape != (n, 2):
        raise ValueError(f"theta must be {n} x 2 (dtau, cA_ref), got {theta.shape}")
    if not np.all(np.isfinite(theta)) or np.any(theta[:, 0] <= 0):
        raise ValueError("theta must be finite with positive dtau")
    return theta


class UNetSurrogate(RegressorMixin, BaseEstimator):
    """Conditional U-Net mapping a field at t to the field at t + dtau.

    ``fit(X, y, theta)`` takes input fields ``X`` (n x 3 x H x W), targets
    ``y`` of the same shape and conditioning ``theta`` (n x 2, columns
    ``dtau`` in snapshot units and ``cA_ref``).
    """

    def __init__(self, levels=4, base_channels=8, attention=True, norm="none",
                 dtau_range=(1.0, 4.0), cA_range=(0.2, 0.4), dtau_unit=1.0,
                 learning_rate=1e-4, epochs=20, batch_size=8, max_updates=None,
                 input_noise=0.0, seed=0, dtype="float32"):
        self.levels = levels
        self.base_channels = base_channels
        self.attention = attention
        self.norm = norm
        self.dtau_range = dtau_range
        self.cA_range = cA_range
        self.dtau_unit = dtau_unit
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_updates = max_updates
        self.input_noise = input_noise
        self.seed = seed
        self.dtype = dtype

    # configuration ---------------------------------------------------
    def unet_config(self) -> UNetConfig:
        return UNetConfig(levels=self.levels, base_channels=self.base_channels,
                          attention_in_bottleneck=self.attention, norm=self.norm,
                          dtau_min=float(self.dtau_range[0]), dtau_max=float(self.dtau_range[1]),
                          cA_min=float(self.cA_range[0]), cA_max=float(self.cA_range[1]),
                          dtau_unit=float(self.dtau_unit))

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed, max_updates=self.max_updates, input_noise=self.input_noise)

    @property
    def spatial_multiple(self) -> int:
        return 2**self.levels

    def _torch_dtype(self):
        if self.dtype not in _DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")
        return _DTYPES[self.dtype]

    # fitting ---------------------------------------------------------
    def fit(self, X, y, theta, progress=None):
        X = check_fields_array(X, multiple=self.spatial_multiple)
        y = check_fields_array(y, multiple=self.spatial_multiple)
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        theta = check_theta(theta, len(X))
        cfg = self.unet_config()
        self.model_, self.loss_history_ = train(PairDataset(X, theta, y), self.train_config(), cfg,
                                                dtype=self._torch_dtype(), progress=progress)
        self.config_ = cfg
        return self

    def fit_dataset(self, dataset: PairDataset, progress=None):
        return self.fit(dataset.X, dataset.Y, dataset.theta, progress=progress)

    @classmethod
    def from_params(cls, config: UNetConfig, params: dict, **kwargs) -> "UNetSurrogate":
        est = cls(levels=config.levels, base_channels=config.base_channels,
                  attention=config.attention_in_bottleneck, norm=config.norm,
                  dtau_range=(config.dtau_min, config.dtau_max), cA_range=(config.cA_min, config.cA_max),
                  dtau_unit=config.dtau_unit, **kwargs)
        model = build_model(config, dtype=est._torch_dtype())
        set_params(model, params)
        model.eval()
        est.model_, est.config_, est.loss_history_ = model, config, []
        return est

    def get_model_params(self) -> dict:
        check_is_fitted(self, "model_")
        return get_params(self.model_)

    # inference -------------------------------------------------------
    def predict(self, X, theta, batch_size: int = 16) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_fields_array(X, multiple=self.spatial_multiple)
        theta = check_theta(theta, len(X))
        dtype = next(self.model_.parameters()).dtype
        T = theta_tensor(theta, self.config_, dtype)
        out = []
        self.model_.eval()
        with torch.inference_mode():
            for s in range(0, len(X), batch_size):
                xb = torch.as_tensor(X[s:s + batch_size], dtype=dtype)
                out.append(self.model_(xb, T[s:s + batch_size]).double().numpy())
        return np.concatenate(out)

    def predict_state(self, state: FieldState, theta: ConditioningInput) -> FieldState:
        """One surrogate step on a FieldState; time is left to the caller."""
        pred = self.predict(to_tensor(state)[None], theta)[0]
        return FieldState(pred[0], pred[1], pred[2], dx=state.dx, time=state.time, cA_ref=state.cA_ref)

    def score(self, X, y, theta=None, sample_weight=None):
        """1 - mean per-sample relative L2 error."""
        if theta is None:
            raise ValueError("theta is required")
        pred = self.predict(X, theta)
        y = check_fields_array(y)
        errs = np.array([relative_l2(p, t) for p, t in zip(pred, y)])
        return 1.0 - float(np.average(errs, weights=sample_weight))
