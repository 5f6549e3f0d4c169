"""Autoregressive surrogate rollout with solver warm start and bottom-of-domain growth."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fields import ConditioningInput, FieldState, ParameterError, clip_fields
from .qoi import deepest_liquid_row, interface_rows
from .solver import PhysicsParams, SolverConfig, run_until

log = logging.getLogger(__name__)


class CapacityError(RuntimeError):
    """Domain growth would exceed the configured maximum height."""


class RolloutError(RuntimeError):
    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class WarmStartError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtensionPolicy:
    """Grow by ``grow_rows`` whenever the deepest liquid row passes ``H - margin_rows``."""

    margin_rows: int = 8
    grow_rows: int = 16
    max_height: int = 256

    def __post_init__(self):
        if self.margin_rows < 0 or self.grow_rows < 0:
            raise ParameterError("margin_rows and grow_rows must be nonnegative")


@dataclass(frozen=True)
class RolloutConfig:
    n_steps: int
    theta: ConditioningInput
    extension: ExtensionPolicy = ExtensionPolicy()
    warm_start_time: float = 0.0
    # rows kept below the deepest liquid row in the surrogate's window; None applies it to the whole domain
    active_margin: int | None = None

    def __post_init__(self):
        if self.n_steps < 0:
            raise ParameterError("n_steps must be nonnegative")
        if self.active_margin is not None and self.active_margin < 1:
            raise ParameterError("active_margin must be positive")
        if self.warm_start_time < 0:
            raise ParameterError("warm_start_time must be nonnegative")


def interface_spread(state: FieldState) -> int:
    """max - min over columns of the first solid row."""
    rows = interface_rows(state.phi)
    return int(rows.max() - rows.min())


def warm_start(state0: FieldState, params: PhysicsParams, solver_config: SolverConfig,
               rollout_config: RolloutConfig, min_spread: int = 1) -> FieldState:
    """Run the solver from the flat initial state until ``warm_start_time``.

    The flat interface is outside the surrogate's training distribution; the
    solver roughens it first. Raises WarmStartError if the resulting interface
    is still flat.
    """
    if not rollout_config.warm_start_time > 0:
        raise ParameterError("warm_start_time must be positive")
    state = run_until(state0, params, solver_config, state0.time + rollout_config.warm_start_time)
    spread = interface_spread(state)
    if spread < min_spread:
        raise WarmStartError(f"interface spread {spread} < {min_spread} cell(s) after warm start")
    return state


def extend_domain(state: FieldState, k: int, cA_ref: float | None = None,
                  max_height: int | None = None) -> FieldState:
    """Append ``k`` rows of bulk alloy (phi = 1, cA = cA_ref, cB = 1 - cA_ref) at the bottom."""
    if k < 0:
        raise ParameterError("k must be nonnegative")
    if cA_ref is None:
        cA_ref = state.cA_ref
    if cA_ref is None:
        raise ParameterError("cA_ref is required when the state does not carry one")
    H, W = state.shape
    if max_height is not None and H + k > max_height:
        raise CapacityError(f"extending {H} by {k} rows exceeds max_height={max_height}")
    if k == 0:
        return state
    pad = np.ones((k, W))
    return state.with_fields(
        phi=np.vstack([state.phi, pad]),
        cA=np.vstack([state.cA, cA_ref * pad]),
        cB=np.vstack([state.cB, (1.0 - cA_ref) * pad]),
    )


def _maybe_extend(state: FieldState, policy: ExtensionPolicy, cA_ref: float, on_extend=None) -> FieldState:
    while deepest_liquid_row(state.phi) > state.height - policy.margin_rows:
        if policy.grow_rows == 0 or state.height >= policy.max_height:
            break
        grown = extend_domain(state, policy.grow_rows, cA_ref, policy.max_height)
        log.debug("domain extended to %d rows", grown.height)
        if on_extend is not None:
            on_extend(state, grown)
        state = grown
    return state


def active_rows(state: FieldState, margin: int | None, multiple: int = 1) -> int:
    """Height of the top window holding the liquid front plus ``margin`` rows of solid.

    Rounded up to ``multiple`` and capped at the domain height.
    """
    if margin is None:
        return state.height
    need = deepest_liquid_row(state.phi) + 1 + margin
    return min(state.height, -(-need // multiple) * multiple)


def _predict_window(model, state: FieldState, theta: ConditioningInput, margin: int | None, multiple: int):
    h = active_rows(state, margin, multiple)
    if h == state.height:
        return model.predict_state(state, theta)
    top = model.predict_state(state.with_fields(state.phi[:h], state.cA[:h], state.cB[:h]), theta)
    # bulk below the window is carried over unchanged
    return state.with_fields(*(np.vstack([getattr(top, n), getattr(state, n)[h:]]) for n in ("phi", "cA", "cB")))


def rollout(model, state0: FieldState, config: RolloutConfig, on_extend=None) -> list[FieldState]:
    """Feed surrogate predictions back as inputs for ``n_steps`` iterations.

    ``model`` needs ``predict_state(state, theta) -> FieldState`` (see
    ``UNetSurrogate``) and a ``dtau_unit`` attribute giving the time of one
    dtau unit. Every emitted state is clipped onto the field bounds and
    extended when its liquid front gets within ``margin_rows`` of the bottom.
    ``on_extend(before, after)`` is called for every extension. With
    ``config.active_margin`` set, the model only sees the rows down to that
    many below the deepest liquid row and deeper rows are held fixed.
    """
    theta = config.theta
    policy = config.extension
    m = getattr(model, "spatial_multiple", 1)
    if state0.height % m or state0.width % m:
        raise ParameterError(f"state {state0.shape} not divisible by {m}")
    if policy.grow_rows % m:
        raise ParameterError(f"grow_rows={policy.grow_rows} must be a multiple of {m}")
    dt = theta.dtau * getattr(model, "dtau_unit", 1.0)
    states = [state0]
    state = state0
    for i in range(config.n_steps):
        state = _maybe_extend(state, policy, theta.cA_ref, on_extend)
        pred = _predict_window(model, state, theta, config.active_margin, m)
        if not (np.all(np.isfinite(pred.phi)) and np.all(np.isfinite(pred.cA)) and np.all(np.isfinite(pred.cB))):
            raise RolloutError(f"non-finite prediction at rollout step {i + 1}", step_index=i + 1)
        state = clip_fields(pred.with_fields(time=state.time + dt))
        state = _maybe_extend(state, policy, theta.cA_ref, on_extend)
        states.append(state)
    return states
