"""End-to-end helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

from .config import PipelineConfig
from .estimator import UNetSurrogate
from .fields import ConditioningInput, FieldState, initial_state
from .model import PairDataset, training_pairs
from .rollout import RolloutConfig, rollout, warm_start
from .solver import SolverConfig, resolve_dt, run, run_until

log = logging.getLogger(__name__)


def make_initial(cfg: PipelineConfig, cA_ref: float, seed: int, height: int | None = None) -> FieldState:
    g = cfg.grid
    return initial_state(height or g.height, g.width, g.dx, cA_ref, g.interface_row, g.noise_amp, seed)


def solver_config_for(cfg: PipelineConfig, cA_ref: float) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(dt=s.dt, safety=s.safety, bc_mode=s.bc_mode, output_every=s.output_every,
                        cA_ref=cA_ref, allow_unstable=s.allow_unstable, overshoot_tol=s.overshoot_tol)


def snapshot_interval(cfg: PipelineConfig) -> float:
    """Dimensionless time between stored snapshots."""
    return cfg.solver.output_every * resolve_dt(cfg.physics_params(), cfg.grid.dx, cfg.solver)


def generate_trajectory(cfg: PipelineConfig, cA_ref: float, seed: int, n_snapshots: int | None = None,
                        height: int | None = None) -> list[FieldState]:
    n = n_snapshots or cfg.data.snapshots
    state = make_initial(cfg, cA_ref, seed, height)
    return run(state, cfg.physics_params(), solver_config_for(cfg, cA_ref), (n - 1) * cfg.solver.output_every)


def generate(cfg: PipelineConfig) -> list[tuple[float, list[FieldState]]]:
    out = []
    for i, ca in enumerate(cfg.data.concentrations):
        t0 = time.perf_counter()
        out.append((ca, generate_trajectory(cfg, ca, cfg.data.seed + i)))
        log.info("cA_ref=%.2f: %d snapshots in %.1fs", ca, len(out[-1][1]), time.perf_counter() - t0)
    return out


def build_dataset(cfg: PipelineConfig, trajectories) -> PairDataset:
    skip = cfg.data.warm_start_snapshots
    return training_pairs([(ca, snaps[skip:]) for ca, snaps in trajectories], cfg.k_min, cfg.k_max)


def make_estimator(cfg: PipelineConfig, **overrides) -> UNetSurrogate:
    m, t = cfg.model, cfg.train
    kw = dict(levels=m.levels, base_channels=m.base_channels, attention=m.attention_in_bottleneck,
              norm=m.norm, dtau_range=(cfg.k_min, cfg.k_max), cA_range=(m.cA_min, m.cA_max),
              dtau_unit=snapshot_interval(cfg), learning_rate=t.learning_rate, epochs=t.epochs,
              batch_size=t.batch_size, max_updates=t.max_updates, input_noise=t.input_noise, seed=t.seed)
    kw.update(overrides)
    return UNetSurrogate(**kw)


def rollout_config(cfg: PipelineConfig, n_steps: int, cA_ref: float, dtau: float | None = None) -> RolloutConfig:
    r = cfg.rollout
    return RolloutConfig(n_steps=n_steps, theta=ConditioningInput(dtau or r.dtau, cA_ref),
                         extension=cfg.extension(), warm_start_time=r.warm_start_time,
                         active_margin=r.active_margin)


def warm_started(cfg: PipelineConfig, cA_ref: float, seed: int, height: int | None = None,
                 min_spread: int = 1) -> FieldState:
    state0 = make_initial(cfg, cA_ref, seed, height)
    return warm_start(state0, cfg.physics_params(), solver_config_for(cfg, cA_ref),
                      rollout_config(cfg, 0, cA_ref), min_spread=min_spread)


@dataclass
class BenchResult:
    span: float
    surrogate_seconds: float
    solver_seconds: float
    surrogate_steps: int
    solver_steps: int

    @property
    def speedup(self) -> float:
        return self.solver_seconds / self.surrogate_seconds


def bench(cfg: PipelineConfig, model: UNetSurrogate, n_steps: int = 10, cA_ref: float = 0.2,
          seed: int = 12345) -> BenchResult:
    """Wall clock of surrogate vs solver from the same warm-started state over the same time span."""
    state = warm_started(cfg, cA_ref, seed, min_spread=0)  # timing only, roughness irrelevant
    rc = rollout_config(cfg, n_steps, cA_ref)
    model.predict_state(state, rc.theta)  # exclude one-off allocation cost
    t0 = time.perf_counter()
    traj = rollout(model, state, rc)
    t_sur = time.perf_counter() - t0
    span = traj[-1].time - state.time
    params = cfg.physics_params()
    sc = solver_config_for(cfg, cA_ref)
    dt = resolve_dt(params, state.dx, sc)
    t0 = time.perf_counter()
    end = run_until(state, params, sc, state.time + span)
    t_sol = time.perf_counter() - t0
    return BenchResult(span, t_sur, t_sol, n_steps, int(round((end.time - state.time) / dt)))
