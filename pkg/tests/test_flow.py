"""Tests for the constrained flow step and its projection machinery."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import dense_projection_reference, stream_field_2d

from biofilmflow import operators as ops
from biofilmflow.constitutive import ModelParams, speed_limit, speed_limit_reg
from biofilmflow.errors import ConfigError
from biofilmflow.flow import (
    FlowStepConfig,
    FlowTrajectory,
    ObstacleField,
    build_obstacle,
    constraint_excess,
    convection_form,
    flow_energy_check,
    make_feasible,
    make_flow_workspace,
    obstacle_project,
    poincare_constant,
    pressure_project,
    predict_velocity,
    project_K,
    step_flow,
    vi_residual,
    workspace_obstacle,
)
from biofilmflow.grid import Grid, ScalarField, VectorField, build_grid


def _workspace(params, cells=(16, 16), dt=1e-3, gamma0=("left",)):
    g = build_grid(2, (1.0, 1.0), cells, gamma0)
    cfg = FlowStepConfig(dt=dt)
    return make_flow_workspace(g, params, cfg), g


# --- obstacle construction ---------------------------------------------------

def test_obstacle_from_clear_fluid(params):
    ws, g = _workspace(params)
    obs = workspace_obstacle(ws, ScalarField.zeros(g))
    top = speed_limit_reg(0.0, params)
    assert np.allclose(obs.values, top, rtol=0, atol=1e-15)
    # clear fluid: the bound sits at the regularized cap, near p0(mu)
    assert top == pytest.approx(speed_limit(params.mu, params), rel=1e-6)


def test_obstacle_solid_block_floor(params):
    ws, g = _workspace(params, cells=(32, 32))
    u = ScalarField.zeros(g)
    u.values[10:22, 10:22] = params.u_star
    obs = workspace_obstacle(ws, u)
    # deeper than the smoothing radius the density is exactly u*, so the
    # bound is the regularized floor mu
    inner = obs.values[14:18, 14:18]
    assert np.allclose(inner, params.mu, rtol=0, atol=1e-12)
    assert obs.values.min() >= params.mu - 1e-12


def test_obstacle_monotone_in_biomass(params):
    ws, g = _workspace(params)
    rng = np.random.default_rng(0)
    u1 = ScalarField(g, rng.uniform(0.0, 0.5, g.cells))
    u2 = ScalarField(g, np.minimum(u1.values + rng.uniform(0.0, 0.4, g.cells), params.u_star))
    o1 = workspace_obstacle(ws, u1)
    o2 = workspace_obstacle(ws, u2)
    assert np.all(o2.values <= o1.values + 1e-12)


# --- convection form ---------------------------------------------------------

def _random_zero_boundary(g, rng):
    comps = []
    for ax in range(g.dim):
        c = rng.standard_normal(g.face_shape(ax))
        c[ops.axslice(g.dim, ax, 0)] = 0.0
        c[ops.axslice(g.dim, ax, -1)] = 0.0
        comps.append(c)
    return VectorField(g, tuple(comps))


def test_convection_skew_identities(params):
    g = Grid((1.0, 1.3), (12, 10))
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = stream_field_2d(g, rng, amplitude=1.0)
        b = _random_zero_boundary(g, rng)
        c = _random_zero_boundary(g, rng)
        scale = (
            np.sqrt(ops.face_l2_sq(list(a.comps), g.cell_volume))
            * np.sqrt(ops.face_l2_sq(list(b.comps), g.cell_volume))
            * np.sqrt(ops.face_l2_sq(list(c.comps), g.cell_volume))
            / min(g.h)
        )
        sym = convection_form(a, b, c, g) + convection_form(a, c, b, g)
        assert abs(sym) <= 1e-12 * scale
        assert abs(convection_form(a, b, b, g)) <= 1e-12 * scale
        zero = VectorField.zeros(g)
        assert convection_form(zero, b, c, g) == 0.0


def _mac_sample(g, fx, fy):
    nodes = [np.arange(g.cells[ax] + 1) * g.h[ax] for ax in range(2)]
    cents = [(np.arange(g.cells[ax]) + 0.5) * g.h[ax] for ax in range(2)]
    X, Y = np.meshgrid(nodes[0], cents[1], indexing="ij")
    cx = fx(X, Y)
    X, Y = np.meshgrid(cents[0], nodes[1], indexing="ij")
    cy = fy(X, Y)
    return VectorField(g, (cx, cy))


def test_convection_form_consistency_order(params):
    # smooth transported/test fields on the unit square, all components
    # vanishing on the boundary; reference value by Gauss-Legendre quadrature
    pi = np.pi
    # exponential modulation keeps the reference integral away from zero
    # (pure trig products cancel by orthogonality)
    ax_f = lambda x, y: np.sin(pi * x) ** 2 * np.sin(2 * pi * y)
    ay_f = lambda x, y: -np.sin(2 * pi * x) * np.sin(pi * y) ** 2
    bx_f = lambda x, y: np.sin(pi * x) * np.sin(pi * y) * np.exp(x)
    by_f = lambda x, y: np.sin(2 * pi * x) * np.sin(pi * y) * np.exp(-y)
    cx_f = lambda x, y: np.sin(pi * x) * np.sin(2 * pi * y) * np.exp(y)
    cy_f = lambda x, y: np.sin(pi * x) * np.sin(pi * y) * np.exp(x - y)

    def integrand(x, y):
        ax, ay = ax_f(x, y), ay_f(x, y)
        dbx_dx = np.exp(x) * np.sin(pi * y) * (pi * np.cos(pi * x) + np.sin(pi * x))
        dbx_dy = pi * np.sin(pi * x) * np.cos(pi * y) * np.exp(x)
        dby_dx = 2 * pi * np.cos(2 * pi * x) * np.sin(pi * y) * np.exp(-y)
        dby_dy = np.sin(2 * pi * x) * np.exp(-y) * (pi * np.cos(pi * y) - np.sin(pi * y))
        return (ax * dbx_dx + ay * dbx_dy) * cx_f(x, y) + (
            ax * dby_dx + ay * dby_dy
        ) * cy_f(x, y)

    nodes, weights = np.polynomial.legendre.leggauss(64)
    t = 0.5 * (nodes + 1.0)
    wq = 0.5 * weights
    X, Y = np.meshgrid(t, t, indexing="ij")
    ref = float(np.einsum("i,j,ij->", wq, wq, integrand(X, Y)))

    errs = []
    for n in (16, 32):
        g = Grid((1.0, 1.0), (n, n))
        a = _mac_sample(g, ax_f, ay_f)
        b = _mac_sample(g, bx_f, by_f)
        c = _mac_sample(g, cx_f, cy_f)
        errs.append(abs(convection_form(a, b, c, g) - ref))
    order = np.log2(errs[0] / errs[1])
    assert order > 1.8


# --- predictor ---------------------------------------------------------------

def test_predict_zero_is_fixed_point(params):
    ws, g = _workspace(params)
    comps, iters, viscous = predict_velocity(ws, VectorField.zeros(g), VectorField.zeros(g))
    assert all(np.all(c == 0.0) for c in comps)
    assert viscous == 0.0


def test_predict_matches_direct_helmholtz_solve(params):
    # with zero transporting velocity the predictor reduces to one linear
    # solve per component; reproduce it with an assembled factorization
    ws, g = _workspace(params, cells=(12, 10))
    rng = np.random.default_rng(1)
    gforce = _random_zero_boundary(g, rng)
    comps, _, _ = predict_velocity(ws, VectorField.zeros(g), gforce)
    dt = ws.cfg.dt
    for ax in range(2):
        A = ops.component_laplacian(g, ax)
        M = sp.identity(A.shape[0], format="csr") + dt * params.nu * A
        rhs = dt * ops.interior_faces(gforce.comps[ax], ax).ravel()
        ref = spla.spsolve(M.tocsc(), rhs)
        got = ops.interior_faces(comps[ax], ax).ravel()
        assert np.abs(got - ref).max() < 1e-12
        # boundary faces of the predictor stay pinned at zero
        assert np.abs(comps[ax][ops.axslice(2, ax, 0)]).max() == 0.0
        assert np.abs(comps[ax][ops.axslice(2, ax, -1)]).max() == 0.0


def test_predict_unforced_contracts_kinetic_energy(params):
    ws, g = _workspace(params)
    rng = np.random.default_rng(2)
    v0 = stream_field_2d(g, rng, amplitude=1.0)
    comps, _, viscous = predict_velocity(ws, v0, VectorField.zeros(g))
    assert viscous > 0.0
    e0 = ops.face_l2_sq(list(v0.comps), g.cell_volume)
    e1 = ops.face_l2_sq(comps, g.cell_volume)
    assert e1 <= e0 * (1.0 + 1e-12)


# --- elementary projections --------------------------------------------------

def test_pressure_project_contracts(params):
    g = Grid((1.0, 1.5), (12, 10))
    rng = np.random.default_rng(3)
    comps = tuple(rng.standard_normal(g.face_shape(ax)) for ax in range(2))
    v = VectorField(g, comps)
    out, pressure, res = pressure_project(v, dt=1e-3)
    vmax = max(float(np.abs(c).max()) for c in out.comps)
    div = np.abs(ops.divergence(list(out.comps), g.h)).max()
    assert div <= 1e-12 * (vmax / min(g.h) + 1.0)
    assert res < 1e-10
    for ax in range(2):
        assert np.abs(out.comps[ax][ops.axslice(2, ax, 0)]).max() == 0.0
        assert np.abs(out.comps[ax][ops.axslice(2, ax, -1)]).max() == 0.0
    # idempotent
    again, _, _ = pressure_project(out, dt=1e-3)
    assert max(np.abs(a - b).max() for a, b in zip(again.comps, out.comps)) < 1e-12
    assert abs(pressure.values.mean()) < 1e-12


def test_pressure_project_annihilates_gradients(params):
    g = Grid((1.0, 1.0), (14, 14))
    rng = np.random.default_rng(4)
    phi = rng.standard_normal(g.cells)
    grad = ops.gradient_faces(phi, g.h)
    out, _, _ = pressure_project(VectorField(g, tuple(grad)), dt=1.0)
    scale = max(np.abs(c).max() for c in grad)
    assert max(np.abs(c).max() for c in out.comps) < 1e-11 * scale


def test_pressure_project_keeps_solenoidal_fields(params):
    g = Grid((1.0, 1.0), (16, 16))
    v = stream_field_2d(g, np.random.default_rng(5), amplitude=1.0)
    out, _, _ = pressure_project(v, dt=1.0)
    assert max(np.abs(a - b).max() for a, b in zip(out.comps, v.comps)) < 1e-12


def test_obstacle_project_examples(params):
    g = Grid((1.0, 1.0), (8, 8))
    v = VectorField(g, (np.full(g.face_shape(0), 3.0), np.full(g.face_shape(1), 4.0)))
    wide = obstacle_project(v, ObstacleField(g, np.full(g.cells, 5.0)))
    assert np.allclose(wide.comps[0], 3.0) and np.allclose(wide.comps[1], 4.0)
    tight = obstacle_project(v, ObstacleField(g, np.full(g.cells, 2.5)))
    assert np.allclose(tight.comps[0], 1.5) and np.allclose(tight.comps[1], 2.0)
    # factors never exceed one
    rng = np.random.default_rng(6)
    v2 = _random_zero_boundary(g, rng)
    obs = ObstacleField(g, rng.uniform(0.1, 1.0, g.cells))
    out = obstacle_project(v2, obs)
    for a, b in zip(out.comps, v2.comps):
        assert np.all(np.abs(a) <= np.abs(b) + 1e-15)


# --- metric projection onto the constraint set -------------------------------

def test_project_K_fixes_feasible_input(params):
    g = Grid((1.0, 1.0), (12, 12))
    v = stream_field_2d(g, np.random.default_rng(7), amplitude=0.01)
    obs = ObstacleField(g, np.full(g.cells, 9.0))
    out, pressure, info = project_K(v, obs, dt=1e-3)
    assert max(np.abs(a - b).max() for a, b in zip(out.comps, v.comps)) < 1e-14
    assert info["sweeps"] <= 2
    assert np.abs(pressure.values).max() < 1e-12


def test_project_K_with_loose_obstacle_is_leray(params):
    g = Grid((1.0, 1.0), (10, 10))
    rng = np.random.default_rng(8)
    comps = tuple(rng.standard_normal(g.face_shape(ax)) for ax in range(2))
    v = VectorField(g, comps)
    obs = ObstacleField(g, np.full(g.cells, 1e6))
    got, p_got, info = project_K(v, obs, dt=1e-3)
    ref, p_ref, _ = pressure_project(v, dt=1e-3)
    assert max(np.abs(a - b).max() for a, b in zip(got.comps, ref.comps)) < 1e-10
    assert np.abs(p_got.values - p_ref.values).max() < 1e-7 * np.abs(p_ref.values).max()


def test_project_K_matches_dense_oracle(params):
    # small instances against an independent dense constrained solver
    for seed in range(3):
        rng = np.random.default_rng(40 + seed)
        g = Grid((1.0, 1.0), (4, 4))
        comps = tuple(rng.standard_normal(g.face_shape(ax)) for ax in range(2))
        obs = rng.uniform(0.25, 0.6, g.cells)
        out, _, info = project_K(
            VectorField(g, comps), ObstacleField(g, obs), dt=1.0,
            feas_tol=1e-10, step_tol=1e-12,
        )
        ref, cert = dense_projection_reference([c.copy() for c in comps], obs, g.h)
        gap = max(np.abs(a - b).max() for a, b in zip(out.comps, ref))
        assert gap < 1e-6
        assert info["max_excess"] <= 1e-10
        assert info["max_div"] <= 1e-10


def test_projection_variational_characterization(params):
    # the projection v_bar of v satisfies <v - v_bar, z - v_bar> <= 0 for
    # every feasible z
    g = Grid((1.0, 1.0), (12, 12))
    rng = np.random.default_rng(9)
    comps = tuple(0.6 * rng.standard_normal(g.face_shape(ax)) for ax in range(2))
    v = VectorField(g, comps)
    obs = ObstacleField(g, np.full(g.cells, 0.3))
    vbar, _, _ = project_K(v, obs, dt=1.0, feas_tol=1e-11, step_tol=1e-13)
    resid = [a - b for a, b in zip(v.comps, vbar.comps)]
    for seed in range(5):
        z = stream_field_2d(g, np.random.default_rng(70 + seed), amplitude=1.0)
        m = ops.interp_centers(list(z.comps))
        speed = np.sqrt(np.sum(m * m, axis=-1)).max()
        z = VectorField(g, tuple(0.9 * 0.3 / speed * c for c in z.comps))
        gap = [a - b for a, b in zip(z.comps, vbar.comps)]
        inner = ops.face_dot(resid, gap, g.cell_volume)
        scale = np.sqrt(ops.face_l2_sq(resid, g.cell_volume)) * np.sqrt(
            ops.face_l2_sq(gap, g.cell_volume)
        )
        assert inner <= 1e-7 * max(scale, 1e-30)


# --- full flow step ----------------------------------------------------------

def test_step_flow_rest_state(params):
    ws, g = _workspace(params)
    v, pressure, rep, obs = step_flow(
        ws, VectorField.zeros(g), ScalarField.zeros(g), VectorField.zeros(g)
    )
    assert all(np.all(c == 0.0) for c in v.comps)
    assert np.abs(pressure.values).max() == 0.0
    assert rep.max_excess <= 0.0
    assert np.allclose(obs.values, speed_limit_reg(0.0, params))


def test_step_flow_solid_block_caps_speed(params):
    ws, g = _workspace(params, cells=(32, 32))
    u = ScalarField.zeros(g)
    u.values[10:22, 10:22] = params.u_star
    rng = np.random.default_rng(10)
    gforce = stream_field_2d(g, rng, amplitude=600.0)
    v = VectorField.zeros(g)
    p0_mu = speed_limit(params.mu, params)
    for n in range(3):
        v, _, rep, obs = step_flow(ws, v, u, gforce)
        # every step honors its own obstacle to projection tolerance
        assert rep.max_excess <= 1e-8 * p0_mu
        assert rep.max_div <= 1e-8
    m = ops.interp_centers(list(v.comps))
    speed = np.sqrt(np.sum(m * m, axis=-1))
    assert speed[14:18, 14:18].max() <= params.mu + 1e-8
    # the fluid region is allowed to move much faster
    assert speed.max() > 10 * params.mu


def test_step_flow_energy_ledger(params):
    ws, g = _workspace(params)
    rng = np.random.default_rng(11)
    gforce = stream_field_2d(g, rng, amplitude=2.0)
    u = ScalarField(g, rng.uniform(0.0, 0.5, g.cells))
    v = stream_field_2d(g, rng, amplitude=0.2)
    vol = g.cell_volume
    kin = [ops.face_l2_sq(list(v.comps), vol)]
    visc, forc = [], []
    for _ in range(15):
        v, _, rep, _ = step_flow(ws, v, u, gforce)
        kin.append(ops.face_l2_sq(list(v.comps), vol))
        visc.append(rep.viscous_grad_sq)
        forc.append(ops.face_l2_sq(list(gforce.comps), vol))
    ratio = flow_energy_check(kin, visc, forc, params.nu, ws.poincare, ws.cfg.dt)
    assert ratio <= 1.0 + 1e-6


def test_step_flow_unforced_is_dissipative(params):
    ws, g = _workspace(params)
    rng = np.random.default_rng(12)
    v = stream_field_2d(g, rng, amplitude=1.0)
    u = ScalarField(g, rng.uniform(0.0, 0.6, g.cells))
    e = ops.face_l2_sq(list(v.comps), g.cell_volume)
    for _ in range(10):
        v, _, _, _ = step_flow(ws, v, u, VectorField.zeros(g))
        e_new = ops.face_l2_sq(list(v.comps), g.cell_volume)
        assert e_new <= e * (1.0 + 1e-12)
        e = e_new


# --- feasibility transfer and inequality defect ------------------------------

def test_make_feasible_examples(params):
    g = Grid((1.0, 1.0), (12, 12))
    eta = stream_field_2d(g, np.random.default_rng(13), amplitude=1.0)
    m = ops.interp_centers(list(eta.comps))
    speed = np.sqrt(np.sum(m * m, axis=-1)).max()
    eta = VectorField(g, tuple(0.3 / speed * c for c in eta.comps))
    obs_old = ObstacleField(g, np.full(g.cells, 0.3))

    same, factor = make_feasible(eta, obs_old, obs_old, params.mu)
    assert factor == 1.0
    assert all(np.array_equal(a, b) for a, b in zip(same.comps, eta.comps))

    s = 0.4 * params.mu
    obs_new = ObstacleField(g, obs_old.values - s)
    out, factor = make_feasible(eta, obs_new, obs_old, params.mu)
    assert factor == pytest.approx(1.0 - s / params.mu, rel=1e-14)
    assert constraint_excess(list(out.comps), obs_new.values) <= 1e-12

    too_far = ObstacleField(g, obs_old.values - 2.0 * params.mu)
    with pytest.raises(ValueError):
        make_feasible(eta, too_far, obs_old, params.mu)


def _recorded_trajectory(params, n_steps=5):
    ws, g = _workspace(params, cells=(16, 16))
    rng = np.random.default_rng(14)
    u = ScalarField.zeros(g)
    u.values[5:11, 5:11] = 0.8
    gforce = stream_field_2d(g, rng, amplitude=20.0)
    traj = FlowTrajectory(g, ws.cfg.dt, params.nu)
    v = VectorField.zeros(g)
    traj.start(v)
    for _ in range(n_steps):
        v, _, rep, obs = step_flow(ws, v, u, gforce)
        traj.append(v, rep.v_star, gforce, obs.values)
    return traj, g


def test_vi_residual_nonnegative_for_solver_iterates(params):
    traj, g = _recorded_trajectory(params)
    ke0 = ops.face_l2_sq(list(traj.v[-1].comps), g.cell_volume)
    etas = traj.v[1:]
    assert vi_residual(traj, etas) >= -1e-8 * (1.0 + ke0)
    zeros = [VectorField.zeros(g) for _ in range(len(traj.v_star))]
    assert vi_residual(traj, zeros) >= -1e-8 * (1.0 + ke0)


def test_vi_residual_rejects_infeasible_eta(params):
    traj, g = _recorded_trajectory(params, n_steps=2)
    huge = [
        VectorField(
            g,
            tuple(100.0 * c for c in stream_field_2d(g, np.random.default_rng(s)).comps),
        )
        for s in range(2)
    ]
    with pytest.raises(ValueError):
        vi_residual(traj, huge)
    with pytest.raises(ValueError):
        vi_residual(traj, traj.v[1:2])  # wrong length


# --- Poincare constant -------------------------------------------------------

def test_poincare_constant_against_dense_eig(params):
    g = Grid((1.0, 1.5), (6, 5))
    lam = min(
        np.linalg.eigvalsh(ops.component_laplacian(g, ax).toarray())[0]
        for ax in range(2)
    )
    expected = 1.0 / np.sqrt(lam * (1.0 - 1e-9))
    assert poincare_constant(g) == pytest.approx(expected, rel=1e-9)


def test_poincare_constant_near_continuum(params):
    # unit square, velocity pinned on the whole boundary: L_P -> 1/(pi sqrt 2)
    g = Grid((1.0, 1.0), (32, 32))
    assert poincare_constant(g) == pytest.approx(1.0 / (np.pi * np.sqrt(2.0)), rel=0.01)


def test_flow_config_guards():
    with pytest.raises(ConfigError):
        FlowStepConfig(dt=0.0)
