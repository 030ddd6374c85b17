"""Time loop: per-step Picard coupling of flow, nutrient, and biomass.

Each step advances all three fields from time t to t+dt by successive
substitution on the biomass iterate: the flow solve sees the current
biomass iterate through its speed obstacle, the nutrient solve sees the
new velocity, the biomass solve sees both, and the loop repeats until
the biomass iterate is stationary in L2. All three solves restart from
the time-level-t fields in every iteration; only the coupling fields
move, so the accepted state is a fixed point of the composed map.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import operators as ops
from .biomass import (
    BiomassStepConfig,
    biomass_energy,
    make_biomass_workspace,
    step_biomass,
)
from .constitutive import speed_limit, validate_params
from .diagnostics import StepDiagnostics, invariant_report
from .errors import ConfigError, InvariantError, NonConvergenceError
from .flow import (
    FlowStepConfig,
    FlowTrajectory,
    make_flow_workspace,
    pressure_project,
    step_flow,
    workspace_obstacle,
)
from .grid import ScalarField, VectorField
from .mollify import build_cutoff, build_kernel, mollify_array
from .nutrient import make_nutrient_workspace, step_nutrient


@dataclass
class SimState:
    t: float
    u: ScalarField
    w: ScalarField
    v: VectorField
    P: ScalarField


@dataclass(frozen=True)
class CouplingConfig:
    dt: float
    t_end: float
    picard_tol: float = 1e-9
    picard_abs_floor: float = 1e-13
    picard_max: int = 40
    picard_min_iters: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        if not self.picard_tol > 0:
            raise ConfigError("picard_tol must be positive")
        if self.picard_max < 1 or self.picard_min_iters < 1:
            raise ConfigError("picard iteration counts must be >= 1")
        if self.picard_min_iters > self.picard_max:
            raise ConfigError("picard_min_iters exceeds picard_max")


@dataclass
class Stepper:
    """Solver workspaces bound to one (grid, params, dt) triple."""

    grid: object
    params: object
    coupling: CouplingConfig
    flow_ws: object
    bio_ws: object
    nut_ws: object
    bio_cfg: BiomassStepConfig


def make_stepper(grid, params, coupling, flow_cfg=None, bio_cfg=None):
    validate_params(params)
    if flow_cfg is None:
        flow_cfg = FlowStepConfig(dt=coupling.dt)
    if bio_cfg is None:
        bio_cfg = BiomassStepConfig(dt=coupling.dt)
    if flow_cfg.dt != coupling.dt or bio_cfg.dt != coupling.dt:
        raise ConfigError("sub-solver dt differs from the coupling dt")
    return Stepper(
        grid=grid,
        params=params,
        coupling=coupling,
        flow_ws=make_flow_workspace(grid, params, flow_cfg),
        bio_ws=make_biomass_workspace(grid, params),
        nut_ws=make_nutrient_workspace(grid, params),
        bio_cfg=bio_cfg,
    )


def check_initial_data(u0, w0, v0, params, div_tol=1e-12):
    """Validate the starting fields; returns (u0, w0, v0) with v0
    divergence-projected when needed.

    Requirements: 0 <= u0 <= u*, 0 <= w0 <= 1, finite energy integral,
    and strict pointwise feasibility of the initial speed against the
    sharp ceiling of the smoothed initial biomass: |v_c| < p0 where the
    smoothed density is below the blow-up point, v_c = 0 elsewhere.
    """
    grid = u0.grid
    uv = u0.values
    if not np.isfinite(uv).all() or uv.min() < 0 or uv.max() > params.u_star:
        bad = np.unravel_index(
            np.argmin(np.minimum(uv, params.u_star - uv)), uv.shape
        )
        raise ConfigError(
            f"initial biomass out of [0, u_star] at cell {tuple(int(i) for i in bad)} "
            f"(value {uv[bad]:.6g})"
        )
    wv = w0.values
    if not np.isfinite(wv).all() or wv.min() < 0 or wv.max() > 1.0:
        bad = np.unravel_index(np.argmin(np.minimum(wv, 1.0 - wv)), wv.shape)
        raise ConfigError(
            f"initial nutrient out of [0, 1] at cell {tuple(int(i) for i in bad)} "
            f"(value {wv[bad]:.6g})"
        )
    phi0 = biomass_energy(u0, params)
    if not np.isfinite(phi0):
        raise ConfigError("initial biomass energy integral is not finite")

    dv = float(np.abs(ops.divergence(list(v0.comps), grid.h)).max())
    vmax = float(max(np.abs(c).max() for c in v0.comps))
    if dv > div_tol * (vmax / min(grid.h) + 1.0):
        v0, _, _ = pressure_project(v0, dt=1.0)

    cutoff = build_cutoff(grid, params.mu).values
    kernel = build_kernel(params.eps, grid)
    dens = np.clip(mollify_array(cutoff * uv, kernel), 0.0, params.u_star)
    m = ops.interp_centers(list(v0.comps))
    speed = np.sqrt(np.sum(m * m, axis=-1))
    ceiling = np.full(grid.cells, np.inf)
    porous = (dens > 0.0) & (dens < params.delta0)
    ceiling[porous] = speed_limit(dens[porous], params)
    ceiling[dens >= params.delta0] = 0.0
    margin = ceiling - speed
    solid = dens >= params.delta0
    bad_solid = solid & (speed > 1e-14)
    bad_porous = ~solid & (margin <= 0.0)
    if bad_solid.any() or bad_porous.any():
        which = bad_solid if bad_solid.any() else bad_porous
        bad = np.unravel_index(np.argmax(which), which.shape)
        raise ConfigError(
            "initial velocity violates strict feasibility at cell "
            f"{tuple(int(i) for i in bad)}: speed {speed[bad]:.6g} vs ceiling "
            f"{ceiling[bad]:.6g}"
        )
    return u0, w0, v0


def picard_step(stepper, state, g, record=None, x_warm=True):
    """Advance one dt; returns (SimState, StepDiagnostics).

    record, when given, is a FlowTrajectory collecting the accepted
    flow sub-steps for the inequality diagnostics.
    """
    cc = stepper.coupling
    grid = stepper.grid
    vol = grid.cell_volume
    uk = state.u
    residuals = []
    accepted = None
    for k in range(cc.picard_max):
        v_new, pressure, flow_rep, obs = step_flow(stepper.flow_ws, state.v, uk, g)
        w_new, nut_rep = step_nutrient(stepper.nut_ws, state.w, uk, v_new, cc.dt)
        u_new, bio_rep = step_biomass(
            stepper.bio_ws,
            state.u,
            w_new,
            v_new,
            stepper.bio_cfg,
            x0=uk.values if x_warm else None,
        )
        norm_prev = np.sqrt(ops.scalar_l2_sq(uk.values, vol))
        res = float(
            np.sqrt(ops.scalar_l2_sq(u_new.values - uk.values, vol))
        )
        residuals.append(res)
        uk = u_new
        accepted = (v_new, pressure, w_new, u_new, flow_rep, nut_rep, bio_rep, obs)
        if k + 1 >= cc.picard_min_iters and res <= cc.picard_tol * norm_prev + cc.picard_abs_floor:
            break
    else:
        raise NonConvergenceError(
            f"coupling iteration did not settle in {cc.picard_max} rounds "
            f"(last residual {residuals[-1]:.3e}); a smaller dt shrinks the "
            "contraction constant",
            residual=residuals[-1],
            history=residuals,
        )

    v_new, pressure, w_new, u_new, flow_rep, nut_rep, bio_rep, obs = accepted
    if record is not None:
        record.append(v_new, list(flow_rep.v_star), g, obs.values)
    new_state = SimState(t=state.t + cc.dt, u=u_new, w=w_new, v=v_new, P=pressure)
    diag = StepDiagnostics(
        step=-1,
        t=new_state.t,
        picard_iters=len(residuals),
        u_min=bio_rep.pre_clamp_min,
        u_max=bio_rep.pre_clamp_max,
        w_min=nut_rep.pre_clamp_min,
        w_max=nut_rep.pre_clamp_max,
        kinetic_energy=0.5 * ops.face_l2_sq(list(v_new.comps), vol),
        phi_u=biomass_energy(u_new, stepper.params),
        nutrient_l2=float(np.sqrt(ops.scalar_l2_sq(w_new.values, vol))),
        max_constraint_excess=flow_rep.max_excess,
        max_div=flow_rep.max_div,
        mass_u=ops.scalar_mass(u_new.values, vol),
        mass_w=ops.scalar_mass(w_new.values, vol),
        clamp_u=bio_rep.clamp_mass,
        clamp_w=nut_rep.clamp_mass,
        picard_residuals=residuals,
        kinetic_sq=ops.face_l2_sq(list(v_new.comps), vol),
        viscous_grad_sq=flow_rep.viscous_grad_sq,
        nutrient_sq=ops.scalar_l2_sq(w_new.values, vol),
        nutrient_grad_sq=ops.gradient_sq_sum(w_new.values, grid.h, vol),
        forcing_sq=ops.face_l2_sq(list(g.comps), vol),
        newton_iters=bio_rep.newton_iters,
        dykstra_sweeps=flow_rep.dykstra_sweeps,
        predict_iters=flow_rep.predict_iters,
        pressure_residual=flow_rep.pressure_residual,
    )
    return new_state, diag


def run(cfg, on_step=None, record_trajectory=False):
    """Drive a full simulation from a parsed configuration.

    Returns (final SimState, list of StepDiagnostics, FlowTrajectory or
    None). on_step(step_index, state, diag), when given, is called after
    every accepted step (the CLI uses it to stream output); it runs
    before invariant enforcement so partial output survives an abort.
    """
    from .config import initial_state, num_steps
    from .output import SeriesWriter, write_snapshot

    grid = cfg.grid
    params = cfg.params
    coupling = CouplingConfig(
        dt=cfg.dt,
        t_end=cfg.t_end,
        picard_tol=cfg.picard_tol,
        picard_abs_floor=cfg.picard_abs_floor,
        picard_max=cfg.picard_max,
        picard_min_iters=cfg.picard_min_iters,
    )
    stepper = make_stepper(grid, params, coupling)
    state = initial_state(cfg)
    g = state.pop("g")
    state = SimState(t=0.0, **state)

    record = None
    if record_trajectory:
        record = FlowTrajectory(grid, coupling.dt, params.nu)
        record.start(state.v)

    steps = num_steps(cfg)
    writer = None
    out_dir = cfg.output.out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        writer = SeriesWriter(os.path.join(out_dir, cfg.output.series_name))
    diags = []
    try:
        for n in range(steps):
            state, diag = picard_step(stepper, state, g, record=record)
            diag = replace(diag, step=n + 1)
            diags.append(diag)
            if writer is not None:
                writer.write_row(diag)
                if cfg.output.snapshot_every and (n + 1) % cfg.output.snapshot_every == 0:
                    write_snapshot(
                        state,
                        grid,
                        out_dir,
                        n + 1,
                        cfg.output.snapshot_fields,
                        obstacle=workspace_obstacle(stepper.flow_ws, state.u),
                    )
            if on_step is not None:
                on_step(n + 1, state, diag)
            rep = invariant_report(
                state,
                params,
                obstacle=workspace_obstacle(stepper.flow_ws, state.u),
                feas_tol=1e-6,
            )
            if not rep.ok:
                names = ", ".join(
                    f"{c.name} (margin {c.margin:.3e})" for c in rep.failures()
                )
                raise InvariantError(f"invariant violated after step {n + 1}: {names}")
    finally:
        if writer is not None:
            writer.close()
    return state, diags, record
