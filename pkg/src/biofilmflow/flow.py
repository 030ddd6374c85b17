"""Constrained flow step: viscous predictor plus projection onto the
divergence-free, speed-limited set.

Per step, with the biomass-dependent obstacle field r >= 0 at cell
centers, the velocity set is

    K(r) = { v : div_h v = 0, v = 0 on boundary faces,
                 |(face-to-center average of v)_c| <= r_c  for every cell }.

The predictor treats viscosity and convection implicitly but freezes
the advecting field at the old velocity, so the convection operator is
exactly skew against the new iterate and the discrete kinetic-energy
inequality holds with no quadrature defect. The projection onto K(r)
runs Dykstra's alternating scheme over three elementary sets (two
checkerboard half-families of the speed balls, then the affine
divergence-free part); every sub-projection is exact, so the scheme
converges to the true metric projection. The accumulated potentials of
the affine projections, divided by dt, serve as the pressure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import operators as ops
from .constitutive import speed_limit_reg
from .errors import ConfigError, NonConvergenceError, StabilityError
from .grid import ScalarField, VectorField
from .mollify import build_cutoff, build_kernel, mollify_array


@dataclass(frozen=True)
class FlowStepConfig:
    dt: float
    feas_tol: float = 1e-9
    step_tol: float = 1e-9
    max_sweeps: int = 200000
    predict_tol: float = 1e-14
    predict_max_iters: int = 60

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("flow step requires dt > 0")


@dataclass
class FlowStepReport:
    predict_iters: int
    dykstra_sweeps: int
    max_excess: float
    max_div: float
    pressure_residual: float
    viscous_grad_sq: float
    v_star: tuple = ()  # predictor components, kept for the inequality ledger


@dataclass(frozen=True)
class ObstacleField:
    grid: object
    values: np.ndarray = field(compare=False)


@dataclass
class FlowWorkspace:
    grid: object
    params: object
    cfg: FlowStepConfig
    kernel_eps: object
    cutoff: np.ndarray
    laplacians: tuple
    helmholtz_lu: tuple
    poincare: float


def make_flow_workspace(grid, params, cfg):
    laps = tuple(ops.component_laplacian(grid, ax) for ax in range(grid.dim))
    lus = tuple(
        splu((sp.identity(A.shape[0], format="csr") + cfg.dt * params.nu * A).tocsc())
        for A in laps
    )
    return FlowWorkspace(
        grid=grid,
        params=params,
        cfg=cfg,
        kernel_eps=build_kernel(params.eps, grid),
        cutoff=build_cutoff(grid, params.mu).values,
        laplacians=laps,
        helmholtz_lu=lus,
        poincare=poincare_constant(grid),
    )


@lru_cache(maxsize=32)
def poincare_constant(grid):
    """Discrete Poincare constant: |z| <= L_P ||z||_A for face fields.

    Computed by inverse power iteration on each component stiffness
    block; the Rayleigh quotient approaches the smallest eigenvalue from
    above, so the iterate is shrunk by a hair to keep the reported
    constant a valid upper bound.
    """
    lam = np.inf
    for ax in range(grid.dim):
        A = ops.component_laplacian(grid, ax)
        if A.shape[0] == 0:
            continue
        lu = splu(A.tocsc())
        x = np.ones(A.shape[0])
        x /= np.linalg.norm(x)
        rho_prev = np.inf
        for _ in range(400):
            y = lu.solve(x)
            ny = np.linalg.norm(y)
            rho = float(x @ y) / ny**2  # Rayleigh quotient of A at y
            x = y / ny
            if abs(rho - rho_prev) <= 1e-13 * abs(rho):
                break
            rho_prev = rho
        lam = min(lam, rho)
    return float(1.0 / np.sqrt(lam * (1.0 - 1e-9)))


def build_obstacle(u, params, kernel_eps, cutoff):
    """Pointwise speed bound induced by a biomass field.

    The biomass is gated by the boundary-layer cutoff, smoothed with the
    wide kernel, and pushed through the regularized speed law. Smoothing
    is an average of values in [0, u*], but rounding can poke out of the
    interval, hence the clip before the speed law.
    """
    dens = mollify_array(cutoff * u.values, kernel_eps)
    dens = np.clip(dens, 0.0, params.u_star)
    return ObstacleField(u.grid, speed_limit_reg(dens, params))


def workspace_obstacle(ws, u):
    return build_obstacle(u, ws.params, ws.kernel_eps, ws.cutoff)


# ---------------------------------------------------------------------------
# Elementary projections
# ---------------------------------------------------------------------------

def _zero_normal_boundary(comps):
    nd = len(comps)
    out = []
    for ax, c in enumerate(comps):
        c = c.copy()
        c[ops.axslice(nd, ax, 0)] = 0.0
        c[ops.axslice(nd, ax, -1)] = 0.0
        out.append(c)
    return out


def _project_affine(comps, h):
    """Exact projection onto {zero boundary faces, div_h = 0}.

    Returns (projected comps, potential phi). Zeroing the boundary faces
    and the interior pressure correction are orthogonal steps, so the
    composition is itself the metric projection onto the affine set.
    """
    out = _zero_normal_boundary(comps)
    phi = ops.poisson_neumann(ops.divergence(out, h), h)
    grad = ops.gradient_faces(phi, h)
    return [c - g for c, g in zip(out, grad)], phi


def _project_parity(comps, obs, parity):
    """Exact projection onto the speed balls of one checkerboard color.

    Cells of the given parity see the face-to-center average m_c; if
    |m_c| > r_c the unique minimum-norm correction subtracts
    m_c (1 - r_c/|m_c|) / 2 from each of the two adjacent faces per
    component (the averaging weights are 1/2, and cells of equal parity
    share no face, which is what makes the cellwise solve exact).
    """
    nd = len(comps)
    m = ops.interp_centers(comps)
    speed = np.sqrt(np.sum(m * m, axis=-1))
    idx = np.indices(obs.shape).sum(axis=0) % 2
    mask = (idx == parity) & (speed > obs)
    scale = np.ones(obs.shape)
    np.divide(obs, speed, out=scale, where=mask)
    out = [c.copy() for c in comps]
    for ax in range(nd):
        corr = np.where(mask, m[..., ax] * (1.0 - scale), 0.0)
        out[ax][ops.axslice(nd, ax, slice(None, -1))] -= corr
        out[ax][ops.axslice(nd, ax, slice(1, None))] -= corr
    return out


def constraint_excess(comps, obs):
    m = ops.interp_centers(comps)
    speed = np.sqrt(np.sum(m * m, axis=-1))
    return float(np.max(speed - obs))


def obstacle_project(v, obs):
    """One-pass cellwise rescaling toward the speed bound (surrogate).

    Scales every cell's averaged velocity to the ball and distributes
    the factor back to faces as the mean of the two adjacent cell
    factors. Cheap and safe (factors <= 1) but not the metric
    projection; the flow step itself uses the alternating scheme.
    """
    nd = v.grid.dim
    m = ops.interp_centers(v.comps)
    speed = np.sqrt(np.sum(m * m, axis=-1))
    s = np.ones(obs.values.shape)
    np.divide(obs.values, speed, out=s, where=speed > obs.values)
    out = []
    for ax, c in enumerate(v.comps):
        pad = [(0, 0)] * nd
        pad[ax] = (1, 1)
        se = np.pad(s, pad, mode="edge")
        factor = 0.5 * (
            se[ops.axslice(nd, ax, slice(None, -1))] + se[ops.axslice(nd, ax, slice(1, None))]
        )
        out.append(c * factor)
    return VectorField(v.grid, tuple(out))


def pressure_project(v, dt):
    """Project a face field onto the divergence-free affine set.

    Returns (projected field, pressure = potential / dt, solver
    residual). The potential is mean-zero.
    """
    grid = v.grid
    out, phi = _project_affine(list(v.comps), grid.h)
    res = ops.neumann_laplacian_apply(phi, grid.h) - ops.divergence(
        _zero_normal_boundary(list(v.comps)), grid.h
    )
    scale = max(1.0, float(np.abs(phi).max()) / min(grid.h) ** 2)
    residual = float(np.abs(res).max()) / scale
    return VectorField(grid, tuple(out)), ScalarField(grid, phi / dt), residual


def project_K(v, obs, dt, feas_tol=1e-9, step_tol=1e-11, max_sweeps=200000):
    """Metric projection onto K(obs) by Dykstra's alternating scheme.

    Returns (VectorField, pressure ScalarField, info dict). Termination
    requires the speed excess and the divergence to sit under feas_tol
    *and* the last full cycle to have moved less than step_tol; plain
    feasibility is reached early by iterates that are still far from
    the projection, so it alone is not a safe stop.
    """
    grid = v.grid
    h = grid.h
    x = [c.copy() for c in v.comps]
    sets = ("red", "black", "affine")
    dev = {s: [np.zeros_like(c) for c in x] for s in sets}
    last_y = None
    last_phi = None
    for sweep in range(max_sweeps):
        x_prev = [c.copy() for c in x]
        for s in sets:
            y = [xc + pc for xc, pc in zip(x, dev[s])]
            if s == "affine":
                # the potential of the affine deviation converges to the
                # constraint multiplier; the per-sweep potentials must NOT
                # be summed (each projection re-handles the restored
                # deviation, so the sum double counts)
                xn, phi = _project_affine(y, h)
                last_y, last_phi = y, phi
            else:
                xn = _project_parity(y, obs.values, 0 if s == "red" else 1)
            dev[s] = [yc - xc for yc, xc in zip(y, xn)]
            x = xn
        excess = constraint_excess(x, obs.values)
        dv = float(np.abs(ops.divergence(x, h)).max())
        inc = max(float(np.abs(a - b).max()) for a, b in zip(x, x_prev))
        if excess <= feas_tol and dv <= feas_tol and inc <= step_tol:
            res = ops.neumann_laplacian_apply(last_phi, h) - ops.divergence(
                _zero_normal_boundary(last_y), h
            )
            info = {
                "sweeps": sweep + 1,
                "max_excess": excess,
                "max_div": dv,
                "pressure_residual": float(np.abs(res).max()),
            }
            return (
                VectorField(grid, tuple(x)),
                ScalarField(grid, last_phi / dt),
                info,
            )
    raise NonConvergenceError(
        f"constraint projection did not settle in {max_sweeps} sweeps "
        f"(excess {excess:.3e}, div {dv:.3e}, step {inc:.3e})",
        residual=max(excess, dv),
    )


# ---------------------------------------------------------------------------
# Predictor and full step
# ---------------------------------------------------------------------------

def predict_velocity(ws, v, g):
    """Solve (I + dt nu A + dt N(v_old, .)) v* = v_old + dt g.

    Matrix-free fixed point on the convection term with the Helmholtz
    part prefactored; the contraction factor is O(dt |v| / h), so at
    advective CFL numbers well below one this settles in a handful of
    iterations. Failure to contract is reported as a stability problem
    (the remedy is a smaller dt). Returns (comps list, iterations,
    viscous form (A v*, v*) h^n).
    """
    grid = ws.grid
    dt = ws.cfg.dt
    nd = grid.dim
    rhs = [
        (ops.interior_faces(vc, ax) + dt * ops.interior_faces(gc, ax)).ravel()
        for ax, (vc, gc) in enumerate(zip(v.comps, g.comps))
    ]
    xs = [ops.interior_faces(vc, ax).ravel().copy() for ax, vc in enumerate(v.comps)]
    iters = 0
    for it in range(ws.cfg.predict_max_iters):
        full = [
            ops.embed_interior(x.reshape(_interior_shape(grid, ax)), grid, ax)
            for ax, x in enumerate(xs)
        ]
        adv = ops.mac_advection(v.comps, full, grid.h)
        new = [
            ws.helmholtz_lu[ax].solve(rhs[ax] - dt * ops.interior_faces(adv[ax], ax).ravel())
            for ax in range(nd)
        ]
        diff = max(float(np.abs(a - b).max()) for a, b in zip(new, xs))
        scale = max(1.0, max(float(np.abs(a).max()) for a in new))
        xs = new
        iters = it + 1
        if diff <= ws.cfg.predict_tol * scale:
            break
    else:
        raise StabilityError(
            "velocity predictor fixed point failed to contract; "
            "the advective CFL number is too large, reduce dt",
            residual=diff,
        )
    comps = [
        ops.embed_interior(x.reshape(_interior_shape(grid, ax)), grid, ax)
        for ax, x in enumerate(xs)
    ]
    viscous = sum(
        float(xs[ax] @ (ws.laplacians[ax] @ xs[ax])) for ax in range(nd)
    ) * grid.cell_volume
    return comps, iters, viscous


def _interior_shape(grid, axis):
    shape = list(grid.cells)
    shape[axis] -= 1
    return tuple(shape)


def step_flow(ws, v, u, g):
    """Advance the velocity one step under the biomass speed obstacle.

    Returns (VectorField, pressure ScalarField, FlowStepReport,
    ObstacleField). The pressure collects the affine multipliers of the
    projection scaled by 1/dt, mean-zero by construction.
    """
    obs = workspace_obstacle(ws, u)
    star, predict_iters, viscous = predict_velocity(ws, v, g)
    v_new, pressure, info = project_K(
        VectorField(ws.grid, tuple(star)),
        obs,
        ws.cfg.dt,
        feas_tol=ws.cfg.feas_tol,
        step_tol=ws.cfg.step_tol,
        max_sweeps=ws.cfg.max_sweeps,
    )
    report = FlowStepReport(
        predict_iters=predict_iters,
        dykstra_sweeps=info["sweeps"],
        max_excess=info["max_excess"],
        max_div=info["max_div"],
        pressure_residual=info["pressure_residual"],
        viscous_grad_sq=viscous,
        v_star=tuple(star),
    )
    return v_new, pressure, report, obs


def convection_form(a, b, c, grid):
    """Trilinear form <N(a, b), c> with h^n face weights."""
    adv = ops.mac_advection(a.comps, list(b.comps), grid.h)
    return ops.face_dot(adv, list(c.comps), grid.cell_volume)


def make_feasible(eta, obs_new, obs_old, mu):
    """Shrink a field feasible for obs_old into K(obs_new).

    Uses the uniform factor (1 - s/mu) with s the sup drift between the
    two obstacles. Valid whenever the old obstacle is at least mu on
    the cells where eta is active (the construction the compactness
    argument uses); collapses, hence errors, when s >= mu.
    """
    s = float(np.abs(obs_new.values - obs_old.values).max())
    if s >= mu:
        raise ValueError(
            f"obstacle drift {s:.3e} >= mu {mu:.3e}: feasibility scaling collapses"
        )
    factor = 1.0 - s / mu
    return VectorField(eta.grid, tuple(factor * c for c in eta.comps)), factor


# ---------------------------------------------------------------------------
# Energy and variational-inequality bookkeeping
# ---------------------------------------------------------------------------

def flow_energy_check(kinetic_sq, viscous_sq, forcing_sq, nu, poincare, dt):
    """Max ratio of the kinetic-energy ledger to its a priori bound.

    kinetic_sq: |v^n|^2 for n = 0..N; viscous_sq: (A v*_m, v*_m) h^n per
    step; forcing_sq: |g_m|^2 per step. Checks for every n

        |v^n|^2 + nu dt sum_{m<n} viscous_sq[m]
            <= |v^0|^2 + (L_P^2/nu) dt sum_{m<n} forcing_sq[m]

    and returns the largest LHS/RHS.
    """
    kinetic_sq = np.asarray(kinetic_sq, dtype=float)
    viscous_sq = np.asarray(viscous_sq, dtype=float)
    forcing_sq = np.asarray(forcing_sq, dtype=float)
    lhs = kinetic_sq[1:] + nu * dt * np.cumsum(viscous_sq)
    rhs = kinetic_sq[0] + (poincare**2 / nu) * dt * np.cumsum(forcing_sq)
    worst = 0.0
    for num, den in zip(lhs, rhs):
        if den == 0.0:
            if num > 0.0:
                return np.inf
            continue
        worst = max(worst, num / den)
    return float(worst)


@dataclass
class FlowTrajectory:
    """Per-step record needed by the inequality defect computation."""

    grid: object
    dt: float
    nu: float
    v: list = field(default_factory=list)  # N+1 velocity fields
    v_star: list = field(default_factory=list)  # N predictor fields
    g: list = field(default_factory=list)  # N forcing fields
    obstacles: list = field(default_factory=list)  # N obstacle cell arrays

    def start(self, v0):
        self.v = [VectorField(self.grid, tuple(c.copy() for c in v0.comps))]

    def append(self, v_new, v_star, g, obs_values):
        self.v.append(VectorField(self.grid, tuple(c.copy() for c in v_new.comps)))
        self.v_star.append(tuple(c.copy() for c in v_star))
        self.g.append(tuple(c.copy() for c in g.comps))
        self.obstacles.append(obs_values.copy())


def vi_residual(traj, etas, feas_tol=1e-7):
    """Global defect of the summed variational inequality.

    etas: one comparison field per step, each required to lie in the
    step's constraint set (checked up to feas_tol). Returns RHS - LHS of
    the summed inequality; for trajectories produced by the projection
    step this is nonnegative up to projection and rounding slack.
    """
    grid = traj.grid
    vol = grid.cell_volume
    h = grid.h
    dt = traj.dt
    n_steps = len(traj.v_star)
    if len(etas) != n_steps or len(traj.v) != n_steps + 1:
        raise ValueError("trajectory record and eta list lengths disagree")

    for n, eta in enumerate(etas):
        for ax, c in enumerate(eta.comps):
            b0 = float(np.abs(c[ops.axslice(grid.dim, ax, 0)]).max(initial=0.0))
            b1 = float(np.abs(c[ops.axslice(grid.dim, ax, -1)]).max(initial=0.0))
            if max(b0, b1) > feas_tol:
                raise ValueError(f"eta[{n}] has nonzero boundary faces")
        dv = float(np.abs(ops.divergence(list(eta.comps), h)).max())
        excess = constraint_excess(list(eta.comps), traj.obstacles[n])
        if dv > feas_tol or excess > feas_tol:
            raise ValueError(
                f"eta[{n}] infeasible: div {dv:.3e}, speed excess {excess:.3e}"
            )

    def dot(a, b):
        return ops.face_dot(list(a), list(b), vol)

    def norm_sq(a):
        return ops.face_l2_sq(list(a), vol)

    def diff(a, b):
        return [x - y for x, y in zip(a, b)]

    lhs = 0.5 * norm_sq(diff(traj.v[n_steps].comps, etas[n_steps - 1].comps))
    rhs = 0.5 * norm_sq(diff(traj.v[0].comps, etas[0].comps))
    laps = tuple(ops.component_laplacian(grid, ax) for ax in range(grid.dim))
    for n in range(n_steps):
        vn = traj.v[n].comps
        vn1 = traj.v[n + 1].comps
        star = traj.v_star[n]
        eta = etas[n].comps
        eta_prev = etas[n - 1].comps if n > 0 else eta
        test = diff(vn1, eta)

        deta = diff(eta, eta_prev)
        lhs += dot(deta, diff(vn, eta_prev)) - 0.5 * norm_sq(deta)
        lhs += 0.5 * norm_sq(diff(vn1, vn))

        a_star = [
            ops.embed_interior(
                (laps[ax] @ ops.interior_faces(star[ax], ax).ravel()).reshape(
                    _interior_shape(grid, ax)
                ),
                grid,
                ax,
            )
            for ax in range(grid.dim)
        ]
        lhs += dt * traj.nu * dot(a_star, test)
        adv = ops.mac_advection(list(vn), list(star), h)
        lhs += dt * dot(adv, test)
        rhs += dt * dot(traj.g[n], test)
    return float(rhs - lhs)
