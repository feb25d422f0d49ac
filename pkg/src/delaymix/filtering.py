"""Kalman filtering, RTS smoothing, window scoring and forecasting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConditioningError, EmptyDatabaseError, NumericalError
from .syslin import DelayFreeModel, Trajectory, _input_array

JITTER = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic noise model for state inference.

    Process covariance is process_var * I, observation covariance is
    obs_var * I, and the prior is N(prior_mean, prior_var * I) with a zero
    mean by default.
    """

    process_var: float = 1e-4
    obs_var: float = 1e-2
    prior_var: float = 1.0
    prior_mean: np.ndarray | None = None

    def __post_init__(self):
        for name in ("process_var", "obs_var", "prior_var"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.prior_mean is not None:
            object.__setattr__(
                self, "prior_mean", np.asarray(self.prior_mean, dtype=np.float64).ravel()
            )

    def prior_for(self, state_dim: int) -> np.ndarray:
        if self.prior_mean is None:
            return np.zeros(state_dim)
        if self.prior_mean.shape[0] != state_dim:
            raise ValueError(
                f"prior_mean has length {self.prior_mean.shape[0]}, model state dim is {state_dim}"
            )
        return self.prior_mean


@dataclass(frozen=True)
class BeliefTrace:
    """Per-step filter quantities over one window (all length T)."""

    filtered_means: np.ndarray      # (T, n)
    filtered_covs: np.ndarray       # (T, n, n)
    predicted_means: np.ndarray     # (T, n)
    predicted_covs: np.ndarray      # (T, n, n)
    gains: np.ndarray               # (T, n, d)
    one_step_predictions: np.ndarray  # (T, d)


@dataclass(frozen=True)
class SmoothedTrace:
    """Backward-pass state estimates; the final mean equals the filtered one."""

    smoothed_means: np.ndarray  # (T, n)
    smoother_gains: np.ndarray  # (T, n, n); the last entry is unused


def _spd_solve(matrix: np.ndarray, rhs: np.ndarray, what: str, step: int):
    """Solve matrix @ x = rhs for symmetric positive definite matrix."""
    sym = 0.5 * (matrix + matrix.T)
    try:
        return cho_solve(cho_factor(sym, lower=True), rhs)
    except np.linalg.LinAlgError:
        pass
    try:
        jittered = sym + JITTER * np.eye(sym.shape[0])
        return cho_solve(cho_factor(jittered, lower=True), rhs)
    except np.linalg.LinAlgError as err:
        raise ConditioningError(
            f"{what} not positive definite after jitter at step {step}"
        ) from err


def kalman_forward(
    model: DelayFreeModel, window: Trajectory, noise: NoiseSpec
) -> BeliefTrace:
    """Forward pass: predict with the dynamics, correct with each output.

    The prior plays the role of the first predicted state, so the first
    one-step prediction is C @ prior_mean; from t >= 1 the prediction uses
    the previous filtered state and the input at t-1.
    """
    a, b, c = model.transition, model.input_map, model.output_map
    n, d = model.state_dim, model.output_dim
    y = window.outputs
    steps = y.shape[0]
    if y.shape[1] != d:
        raise ValueError(f"window outputs have {y.shape[1]} channels, model emits {d}")
    u = window.inputs
    gamma = noise.process_var * np.eye(n)
    r_obs = noise.obs_var * np.eye(d)
    eye_n = np.eye(n)

    filtered_means = np.empty((steps, n))
    filtered_covs = np.empty((steps, n, n))
    predicted_means = np.empty((steps, n))
    predicted_covs = np.empty((steps, n, n))
    gains = np.empty((steps, n, d))
    predictions = np.empty((steps, d))

    mean = noise.prior_for(n)
    cov = noise.prior_var * eye_n
    for t in range(steps):
        if t == 0:
            mean_pred = mean
            cov_pred = cov
        else:
            mean_pred = a @ mean + b @ u[t - 1]
            cov_pred = a @ cov @ a.T + gamma
        cov_pred = 0.5 * (cov_pred + cov_pred.T)
        innovation_cov = c @ cov_pred @ c.T + r_obs
        gain = _spd_solve(innovation_cov, c @ cov_pred, "innovation covariance", t).T
        y_pred = c @ mean_pred
        mean = mean_pred + gain @ (y[t] - y_pred)
        cov = (eye_n - gain @ c) @ cov_pred
        cov = 0.5 * (cov + cov.T)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericalError(f"non-finite filter state at step {t}", step=t)
        predicted_means[t] = mean_pred
        predicted_covs[t] = cov_pred
        gains[t] = gain
        filtered_means[t] = mean
        filtered_covs[t] = cov
        predictions[t] = y_pred
    return BeliefTrace(
        filtered_means, filtered_covs, predicted_means, predicted_covs, gains, predictions
    )


def rts_smoother(model: DelayFreeModel, trace: BeliefTrace) -> SmoothedTrace:
    """Backward pass refining filtered means with future information."""
    a = model.transition
    steps, n = trace.filtered_means.shape
    smoothed = np.empty((steps, n))
    gains = np.zeros((steps, n, n))
    smoothed[-1] = trace.filtered_means[-1]
    for t in range(steps - 2, -1, -1):
        # V(t) = P(t) A^T inv(P_pred(t+1)), computed via an SPD solve
        gain = _spd_solve(
            trace.predicted_covs[t + 1],
            a @ trace.filtered_covs[t],
            "predicted covariance",
            t + 1,
        ).T
        gains[t] = gain
        smoothed[t] = trace.filtered_means[t] + gain @ (
            smoothed[t + 1] - trace.predicted_means[t + 1]
        )
    return SmoothedTrace(smoothed, gains)


def window_error(model: DelayFreeModel, window: Trajectory, noise: NoiseSpec) -> float:
    """Mean Euclidean one-step prediction error over the window.

    The mean (rather than a raw sum) keeps the value comparable across
    window lengths, so a fit threshold on it is length independent.
    """
    trace = kalman_forward(model, window, noise)
    errors = np.linalg.norm(window.outputs - trace.one_step_predictions, axis=1)
    return float(errors.mean())


def select_regime(
    database: Sequence[DelayFreeModel], window: Trajectory, noise: NoiseSpec
) -> tuple[int, float]:
    """Index of the model with the lowest window error; ties keep the lowest index."""
    if len(database) == 0:
        raise EmptyDatabaseError("cannot select a regime from an empty model database")
    errors = [window_error(model, window, noise) for model in database]
    best = int(np.argmin(errors))
    return best, float(errors[best])


def forecast(
    model: DelayFreeModel,
    window: Trajectory,
    future_inputs,
    noise: NoiseSpec,
) -> np.ndarray:
    """Multi-step prediction anchored by smoothing over the window.

    The filter and smoother estimate the state at the final window index;
    advancing it once with the final window input gives the state at the
    first forecast step. From there the deterministic recursion consumes
    the future inputs, emitting one output per step.
    """
    future = _input_array(future_inputs, model.input_dim, "future_inputs")
    horizon = future.shape[0]
    if horizon < 1:
        raise ValueError("future_inputs must contain at least one step")
    trace = kalman_forward(model, window, noise)
    smoothed = rts_smoother(model, trace)
    a, b, c = model.transition, model.input_map, model.output_map
    steps = window.outputs.shape[0]
    state = a @ smoothed.smoothed_means[-1] + b @ window.inputs[steps - 1]
    outputs = np.empty((horizon, model.output_dim))
    for i in range(horizon):
        outputs[i] = c @ state
        state = a @ state + b @ future[i]
    return outputs
