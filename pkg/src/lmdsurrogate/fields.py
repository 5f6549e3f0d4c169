"""Simulation state, parameter records and shared field arithmetic.

Channel order everywhere is ``(phi, cA, cB)``. The third species fraction
``cC = 1 - cA - cB`` is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

CHANNELS = ("phi", "cA", "cB")
# c_A + c_B may overshoot 1 by this much before from_tensor refuses the data
SUM_CLIP_TOL = 1e-3
# dimensionless time unit -> seconds (conventional; see README)
DEFAULT_TIME_UNIT_SECONDS = 1e-12


class ParameterError(ValueError):
    """Invalid argument or configuration value."""


class ValidationError(ValueError):
    """Field data violates a state invariant."""


@dataclass(frozen=True, eq=False)
class FieldState:
    """Immutable (phi, cA, cB) snapshot on an H x W grid; row 0 is the top."""

    phi: np.ndarray
    cA: np.ndarray
    cB: np.ndarray
    dx: float = 1.0
    time: float = 0.0
    cA_ref: float | None = None

    def __post_init__(self):
        arrays = []
        for name in CHANNELS:
            a = np.asarray(getattr(self, name))
            a = np.array(a, dtype=np.float32 if a.dtype == np.float32 else np.float64)
            if a.ndim != 2:
                raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        if not (arrays[0].shape == arrays[1].shape == arrays[2].shape):
            raise ValidationError("phi, cA and cB must share one H x W shape")
        if self.dx <= 0:
            raise ValidationError("dx must be positive")
        if self.time < 0:
            raise ValidationError("time must be nonnegative")

    @property
    def height(self) -> int:
        return self.phi.shape[0]

    @property
    def width(self) -> int:
        return self.phi.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi.shape

    def with_fields(self, phi=None, cA=None, cB=None, time=None) -> "FieldState":
        return replace(
            self,
            phi=self.phi if phi is None else phi,
            cA=self.cA if cA is None else cA,
            cB=self.cB if cB is None else cB,
            time=self.time if time is None else time,
        )

    def check(self, atol: float = 0.0) -> None:
        """Raise ValidationError unless all bound invariants hold."""
        for name in CHANNELS:
            a = getattr(self, name)
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} contains NaN or Inf")
            if a.min() < -atol or a.max() > 1 + atol:
                raise ValidationError(f"{name} outside [0, 1]: [{a.min()}, {a.max()}]")
        s = (self.cA + self.cB).max()
        if s > 1 + max(atol, 4 * np.finfo(self.cA.dtype).eps):  # a sum can round up by an ulp
            raise ValidationError(f"cA + cB exceeds 1 (max {s})")

    def copy(self) -> "FieldState":
        return self.with_fields(self.phi.copy(), self.cA.copy(), self.cB.copy())


@dataclass(frozen=True)
class PhysicsParams:
    """Phase-field constants.

    ``omega_solid`` and ``omega_liquid`` hold the regular-solution interaction
    parameters in the order (AC, BC, AB).
    """

    M_phi: float = 0.2
    eta: float = 1.0
    eps2: float = 1.0
    W_dw: float = 1.0
    kappa_c: float = 0.25
    RT_v: float = 1.0
    omega_solid: tuple[float, float, float] = (3.5, 3.5, 2.5)
    omega_liquid: tuple[float, float, float] = (3.5, 0.0, 2.5)
    M_S: float = 1e-3
    M_L: float = 1.0
    clip_delta: float = 1e-4

    def __post_init__(self):
        for name in ("M_phi", "eta", "eps2", "W_dw", "RT_v", "M_S", "M_L"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if self.kappa_c < 0:
            raise ParameterError("kappa_c must be nonnegative")
        if self.M_S > self.M_L:
            raise ParameterError("M_S must not exceed M_L")
        if not 0 < self.clip_delta <= 1e-3:
            raise ParameterError("clip_delta must lie in (0, 1e-3]")
        object.__setattr__(self, "omega_solid", tuple(float(v) for v in self.omega_solid))
        object.__setattr__(self, "omega_liquid", tuple(float(v) for v in self.omega_liquid))
        if len(self.omega_solid) != 3 or len(self.omega_liquid) != 3:
            raise ParameterError("omega_solid and omega_liquid need three entries (AC, BC, AB)")

    @classmethod
    def for_grid(cls, dx: float = 1.0, **overrides) -> "PhysicsParams":
        """Default dealloying parameters with the length-dependent constants tied to ``dx``."""
        base = dict(eps2=dx**2, kappa_c=dx**2 / 4, eta=dx)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class ConditioningInput:
    """Network conditioning pair: time skip and reference A concentration."""

    dtau: float
    cA_ref: float

    def __post_init__(self):
        if not self.dtau > 0:
            raise ParameterError("dtau must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.dtau, self.cA_ref], dtype=np.float64)


def initial_state(H: int, W: int, dx: float, cA_ref: float, interface_row: int,
                  noise_amp: float = 0.0, seed: int = 0) -> FieldState:
    """Flat liquid-over-solid state: pure C above ``interface_row``, alloy at and below."""
    if H <= 0 or W <= 0:
        raise ParameterError("H and W must be positive")
    if not 0 < interface_row < H:
        raise ParameterError(f"interface_row must satisfy 0 < row < H, got {interface_row}")
    if not 0 <= cA_ref <= 1:
        raise ParameterError("cA_ref must lie in [0, 1]")
    if noise_amp < 0 or cA_ref + noise_amp >= 1:
        raise ParameterError("need noise_amp >= 0 and cA_ref + noise_amp < 1")
    phi = np.zeros((H, W))
    cA = np.zeros((H, W))
    cB = np.zeros((H, W))
    phi[interface_row:] = 1.0
    cA[interface_row:] = cA_ref
    cB[interface_row:] = 1.0 - cA_ref
    if noise_amp > 0:
        rng = np.random.default_rng(seed)
        n = (H - interface_row, W)
        cA[interface_row:] += rng.uniform(-noise_amp, noise_amp, n)
        cB[interface_row:] += rng.uniform(-noise_amp, noise_amp, n)
    return clip_fields(FieldState(phi, cA, cB, dx=dx, time=0.0, cA_ref=cA_ref))


def clip_fields(state: FieldState) -> FieldState:
    """Project onto the admissible set: fields in [0, 1] and cA + cB <= 1."""
    phi = np.clip(state.phi, 0.0, 1.0)
    cA = np.clip(state.cA, 0.0, 1.0)
    cB = np.clip(state.cB, 0.0, 1.0)
    s = cA + cB
    over = s > 1.0
    if np.any(over):
        cA = np.where(over, cA / np.where(over, s, 1.0), cA)
        cB = np.where(over, cB / np.where(over, s, 1.0), cB)
        cB = np.minimum(cB, 1.0 - cA)
    return state.with_fields(phi, cA, cB)


def relative_l2(a, b, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||b||, floor)`` over all elements."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()) / max(np.linalg.norm(b.ravel()), floor))


def to_tensor(state: FieldState) -> np.ndarray:
    return np.stack([state.phi, state.cA, state.cB])


def from_tensor(t, dx: float = 1.0, time: float = 0.0, cA_ref: float | None = None,
                tol: float = SUM_CLIP_TOL) -> FieldState:
    """Unpack a 3 x H x W array.

    Values must lie in [0, 1]. Where ``cA + cB`` exceeds 1 by no more than
    ``tol`` both are rescaled proportionally onto the simplex; larger
    violations raise ValidationError.
    """
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 3:
        raise ValidationError(f"expected a 3 x H x W array, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValidationError("tensor contains NaN or Inf")
    if t.min() < 0 or t.max() > 1:
        raise ValidationError(f"tensor values outside [0, 1]: [{t.min()}, {t.max()}]")
    phi, cA, cB = t[0], t[1], t[2]
    s = cA + cB
    if s.max() > 1 + tol:
        r, c = np.unravel_index(np.argmax(s), s.shape)
        raise ValidationError(f"cA + cB = {s[r, c]:.6g} at ({r}, {c}) exceeds 1 + {tol}")
    over = s > 1
    if np.any(over):
        scale = np.where(over, 1.0 / np.where(over, s, 1.0), 1.0)
        cA = cA * scale
        cB = cB * scale
    return FieldState(phi.copy(), np.array(cA, copy=True), np.array(cB, copy=True),
                      dx=dx, time=time, cA_ref=cA_ref)


def stack_states(states: Sequence[FieldState]) -> np.ndarray:
    return np.stack([to_tensor(s) for s in states])
