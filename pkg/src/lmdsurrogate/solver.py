"""Explicit finite-difference integrator for the coupled Allen-Cahn / Cahn-Hilliard
dealloying model.

Free energy density::

    W_dw g(phi) + eps2/2 |grad phi|^2 + h(phi) f_S(c) + (1 - h(phi)) f_L(c)
        + kappa_c/2 (|grad cA|^2 + |grad cB|^2)

with g = phi^2 (1 - phi)^2, h = phi^2 (3 - 2 phi) and regular-solution bulk
chemistry f_P. Species fluxes use the degenerate mobility matrix
``M_ij = M(phi) (c_i delta_ij - c_i c_j)`` with ``M(phi) = M_L + (M_S - M_L) h(phi)``.

Boundaries: columns are periodic. In ``physical`` mode the top ghost row is
pure liquid C (phi = 0, cA = cB = 0) and the bottom ghost row is bulk alloy
(phi = 1, cA = cA_ref, cB = 1 - cA_ref). ``all_periodic`` wraps rows as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .fields import FieldState, ParameterError, PhysicsParams, clip_fields

log = logging.getLogger(__name__)

BCMode = Literal["physical", "all_periodic"]


class InstabilityError(RuntimeError):
    """Raised when an explicit update blows up."""

    def __init__(self, message, field=None, step_index=None):
        super().__init__(message)
        self.field = field
        self.step_index = step_index


@dataclass(frozen=True)
class SolverConfig:
    """Integrator settings.

    ``dt=None`` selects ``stable_dt``. An explicit ``dt`` above the bound is
    refused unless ``allow_unstable`` is set. ``overshoot_tol`` is how far a
    raw (pre-clip) update may leave [0, 1] before it counts as a blow-up.
    """

    dt: float | None = None
    safety: float = 0.05
    bc_mode: BCMode = "physical"
    output_every: int = 500
    cA_ref: float = 0.2
    allow_unstable: bool = False
    overshoot_tol: float = 0.25

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not 0 < self.safety <= 1:
            raise ParameterError("safety must lie in (0, 1]")
        if self.bc_mode not in ("physical", "all_periodic"):
            raise ParameterError(f"unknown bc_mode {self.bc_mode!r}")
        if self.output_every < 1:
            raise ParameterError("output_every must be >= 1")


# ---------------------------------------------------------------- bulk chemistry

def g_prime(phi):
    return 2.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)


def h_interp(phi):
    return phi * phi * (3.0 - 2.0 * phi)


def h_prime(phi):
    return 6.0 * phi * (1.0 - phi)


def _omegas(params: PhysicsParams, phase: str):
    if phase == "solid":
        return params.omega_solid
    if phase == "liquid":
        return params.omega_liquid
    raise ParameterError(f"phase must be 'solid' or 'liquid', got {phase!r}")


def clip_composition(cA, cB, delta):
    """Clip (cA, cB) and the implied cC into [delta, 1 - delta] for logarithms."""
    a = np.clip(cA, delta, 1.0 - delta)
    b = np.clip(cB, delta, 1.0 - delta)
    c = np.maximum(1.0 - a - b, delta)
    return a, b, c


def bulk_free_energy(cA, cB, phase: str, params: PhysicsParams):
    """Regular-solution free energy density of one phase.

    The caller clips; ``cC = 1 - cA - cB`` must be positive.
    """
    w_ac, w_bc, w_ab = _omegas(params, phase)
    cA = np.asarray(cA, dtype=np.float64)
    cB = np.asarray(cB, dtype=np.float64)
    cC = 1.0 - cA - cB
    ent = cA * np.log(cA) + cB * np.log(cB) + cC * np.log(cC)
    return params.RT_v * ent + w_ac * cA * cC + w_bc * cB * cC + w_ab * cA * cB


def bulk_free_energy_gradient(cA, cB, phase: str, params: PhysicsParams):
    """Partial derivatives (df/dcA, df/dcB) with cC eliminated."""
    w_ac, w_bc, w_ab = _omegas(params, phase)
    cC = 1.0 - cA - cB
    dA = params.RT_v * np.log(cA / cC) + w_ac * (cC - cA) - w_bc * cB + w_ab * cB
    dB = params.RT_v * np.log(cB / cC) + w_bc * (cC - cB) - w_ac * cA + w_ab * cA
    return dA, dB


def _bulk_terms(phi, cA, cB, params: PhysicsParams):
    """Pointwise (f_S - f_L, dfmix/dcA, dfmix/dcB) on clipped compositions."""
    a, b, c = clip_composition(cA, cB, params.clip_delta)
    # cC re-floored above, so evaluate with the clipped triple directly
    ent = a * np.log(a) + b * np.log(b) + c * np.log(c)
    lna_c = np.log(a / c)
    lnb_c = np.log(b / c)
    sa, sb, sab = params.omega_solid
    la, lb, lab = params.omega_liquid
    f_s = params.RT_v * ent + sa * a * c + sb * b * c + sab * a * b
    f_l = params.RT_v * ent + la * a * c + lb * b * c + lab * a * b
    h = h_interp(phi)
    dsa = sa * (c - a) - sb * b + sab * b
    dsb = sb * (c - b) - sa * a + sab * a
    dla = la * (c - a) - lb * b + lab * b
    dlb = lb * (c - b) - la * a + lab * a
    muA = params.RT_v * lna_c + h * dsa + (1.0 - h) * dla
    muB = params.RT_v * lnb_c + h * dsb + (1.0 - h) * dlb
    return f_s - f_l, muA, muB


# ---------------------------------------------------------------- stencils

def _ghost_values(cA_ref: float):
    return {"phi": (0.0, 1.0), "cA": (0.0, cA_ref), "cB": (0.0, 1.0 - cA_ref)}


def pad_field(a: np.ndarray, top: float, bottom: float, bc_mode: BCMode) -> np.ndarray:
    """One ghost layer: rows Dirichlet (or wrapped), columns wrapped."""
    H, W = a.shape
    out = np.empty((H + 2, W + 2), dtype=a.dtype)
    out[1:-1, 1:-1] = a
    if bc_mode == "all_periodic":
        out[0, 1:-1] = a[-1]
        out[-1, 1:-1] = a[0]
    else:
        out[0, 1:-1] = top
        out[-1, 1:-1] = bottom
    out[:, 0] = out[:, -2]
    out[:, -1] = out[:, 1]
    return out


def _laplacian(p: np.ndarray, dx: float) -> np.ndarray:
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1]) / (dx * dx)


def _cA_ref(state: FieldState, config: SolverConfig) -> float:
    return config.cA_ref if state.cA_ref is None else state.cA_ref


def variational_derivative_phi(state: FieldState, params: PhysicsParams,
                               bc_mode: BCMode = "physical", cA_ref: float | None = None) -> np.ndarray:
    """dF/dphi = W_dw g'(phi) - eps2 lap(phi) + h'(phi) (f_S - f_L)."""
    phi = state.phi
    ref = cA_ref if cA_ref is not None else (state.cA_ref if state.cA_ref is not None else 0.2)
    php = pad_field(phi, *_ghost_values(ref)["phi"], bc_mode)
    dfsl, _, _ = _bulk_terms(phi, state.cA, state.cB, params)
    return params.W_dw * g_prime(phi) - params.eps2 * _laplacian(php, state.dx) + h_prime(phi) * dfsl


def chemical_potentials(state: FieldState, params: PhysicsParams,
                        bc_mode: BCMode = "physical", cA_ref: float | None = None):
    """(mu_A, mu_B) on the interior cells."""
    ref = cA_ref if cA_ref is not None else (state.cA_ref if state.cA_ref is not None else 0.2)
    ghosts = _ghost_values(ref)
    _, muA, muB = _bulk_terms(state.phi, state.cA, state.cB, params)
    if params.kappa_c:
        muA = muA - params.kappa_c * _laplacian(pad_field(state.cA, *ghosts["cA"], bc_mode), state.dx)
        muB = muB - params.kappa_c * _laplacian(pad_field(state.cB, *ghosts["cB"], bc_mode), state.dx)
    return muA, muB


def _pad_mu(mu: np.ndarray, ghost_mu: tuple[float, float], bc_mode: BCMode) -> np.ndarray:
    return pad_field(mu, ghost_mu[0], ghost_mu[1], bc_mode)


def _reservoir_mu(params: PhysicsParams, cA_ref: float):
    """Chemical potentials of the top (pure C liquid) and bottom (bulk alloy) reservoirs."""
    phi = np.array([0.0, 1.0])
    cA = np.array([0.0, cA_ref])
    cB = np.array([0.0, 1.0 - cA_ref])
    _, muA, muB = _bulk_terms(phi, cA, cB, params)
    return (muA[0], muA[1]), (muB[0], muB[1])


def _flux_divergence(mobs, mus, dx):
    """sum_j div(M_ij grad mu_j) on the interior, face mobilities by arithmetic mean.

    ``mobs`` is a list over j of padded cell mobilities, ``mus`` the padded potentials.
    """
    out = 0.0
    for M, mu in zip(mobs, mus):
        c = M[1:-1, 1:-1]
        m0 = mu[1:-1, 1:-1]
        out = out + (
            0.5 * (c + M[:-2, 1:-1]) * (mu[:-2, 1:-1] - m0)
            + 0.5 * (c + M[2:, 1:-1]) * (mu[2:, 1:-1] - m0)
            + 0.5 * (c + M[1:-1, :-2]) * (mu[1:-1, :-2] - m0)
            + 0.5 * (c + M[1:-1, 2:]) * (mu[1:-1, 2:] - m0)
        )
    return out / (dx * dx)


def stable_dt(params: PhysicsParams, dx: float, safety: float = 0.05) -> float:
    """Conservative explicit-Euler bound.

    Effective constants: the Allen-Cahn rate is ``M_phi * pi^2 / (8 eta)``; the
    biharmonic and diffusive limits use the liquid mobility ``M_L`` (the
    degenerate factor c (1 - c) <= 1/4 is dropped, which only tightens the bound).
    """
    limits = [dx**2 / (4.0 * params.M_phi * math.pi**2 / (8.0 * params.eta) * params.eps2),
              dx**2 / (4.0 * params.M_L * params.RT_v)]
    if params.kappa_c > 0:
        limits.append(dx**4 / (16.0 * params.M_L * params.kappa_c))
    return safety * min(limits)


def resolve_dt(params: PhysicsParams, dx: float, config: SolverConfig) -> float:
    bound = stable_dt(params, dx, config.safety)
    if config.dt is None:
        return bound
    if config.dt > bound and not config.allow_unstable:
        raise ParameterError(f"dt={config.dt:g} exceeds stable_dt={bound:g}; set allow_unstable to override")
    return config.dt


def step(state: FieldState, params: PhysicsParams, config: SolverConfig, dt: float | None = None) -> FieldState:
    """Advance one explicit Euler step and project back onto the field bounds."""
    if dt is None:
        dt = resolve_dt(params, state.dx, config)
    bc = config.bc_mode
    ref = _cA_ref(state, config)
    ghosts = _ghost_values(ref)
    dx = state.dx
    phi, cA, cB = state.phi, state.cA, state.cB

    php = pad_field(phi, *ghosts["phi"], bc)
    cAp = pad_field(cA, *ghosts["cA"], bc)
    cBp = pad_field(cB, *ghosts["cB"], bc)

    dfsl, muA, muB = _bulk_terms(phi, cA, cB, params)
    dF_dphi = params.W_dw * g_prime(phi) - params.eps2 * _laplacian(php, dx) + h_prime(phi) * dfsl
    if params.kappa_c:
        muA = muA - params.kappa_c * _laplacian(cAp, dx)
        muB = muB - params.kappa_c * _laplacian(cBp, dx)
    gA, gB = _reservoir_mu(params, ref)
    muAp = _pad_mu(muA, gA, bc)
    muBp = _pad_mu(muB, gB, bc)

    Mp = params.M_L + (params.M_S - params.M_L) * h_interp(php)
    M_AA = Mp * cAp * (1.0 - cAp)
    M_BB = Mp * cBp * (1.0 - cBp)
    M_AB = -Mp * cAp * cBp

    new_phi = phi - dt * params.M_phi * (math.pi**2 / (8.0 * params.eta)) * dF_dphi
    new_cA = cA + dt * _flux_divergence([M_AA, M_AB], [muAp, muBp], dx)
    new_cB = cB + dt * _flux_divergence([M_AB, M_BB], [muAp, muBp], dx)

    tol = config.overshoot_tol
    for name, arr in (("phi", new_phi), ("cA", new_cA), ("cB", new_cB)):
        if not np.all(np.isfinite(arr)):
            raise InstabilityError(f"non-finite values in {name}", field=name)
        if arr.min() < -tol or arr.max() > 1.0 + tol:
            raise InstabilityError(
                f"{name} left [0, 1] by more than {tol} (range [{arr.min():.3g}, {arr.max():.3g}])", field=name)
    return clip_fields(FieldState(new_phi, new_cA, new_cB, dx=dx, time=state.time + dt, cA_ref=state.cA_ref))


def run(state: FieldState, params: PhysicsParams, config: SolverConfig, n_steps: int) -> list[FieldState]:
    """Integrate ``n_steps``; snapshot every ``output_every`` steps plus the initial and final states."""
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    dt = resolve_dt(params, state.dx, config)
    snaps = [state.copy()]
    for i in range(1, n_steps + 1):
        try:
            state = step(state, params, config, dt)
        except InstabilityError as err:
            raise InstabilityError(f"step {i}: {err}", field=err.field, step_index=i) from err
        if i % config.output_every == 0 or i == n_steps:
            snaps.append(state.copy())
    log.debug("ran %d steps (dt=%g), %d snapshots", n_steps, dt, len(snaps))
    return snaps


def run_until(state: FieldState, params: PhysicsParams, config: SolverConfig, t_end: float) -> FieldState:
    """Integrate until ``time >= t_end`` and return only the final state."""
    dt = resolve_dt(params, state.dx, config)
    n = int(math.ceil((t_end - state.time) / dt - 1e-9))
    for i in range(1, n + 1):
        try:
            state = step(state, params, config, dt)
        except InstabilityError as err:
            raise InstabilityError(f"step {i}: {err}", field=err.field, step_index=i) from err
    return state
