import math

import numpy as np
import pytest

from smllg.checks import normalization_gaps, oracle_errors
from smllg.config import SimConfig
from smllg.ensemble import fitted_slope
from smllg.errors import ConfigError, InvariantViolation
from smllg.femcore import EdgeField, NodalField, interpolate_edge
from smllg.mesh import build_cube_mesh
from smllg.noise import WienerPath, sample_wiener_path
from smllg.oracles import local_geometry
from smllg.stepper import (Probes, Simulation, StepState, build_tangent_frame, compute_energies,
                           llg_step, maxwell_step, normalize_update, run_path, sphere_defect_sq)


def small(**kw):
    base = dict(n=2, J=4, L=1)
    base.update(kw)
    return SimConfig(**base)


def const(v):
    v = np.asarray(v, dtype=float)
    return lambda x: np.broadcast_to(v, x.shape).copy()


def random_state(sim, rng, W=0.3):
    mesh = sim.mesh
    m = rng.normal(size=(mesh.n_d_vertices, 3))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    P = rng.normal(size=mesh.n_edges)
    path = WienerPath(np.full(sim.config.J + 1, W), sim.k, 0)
    return StepState(0, NodalField(m, mesh), EdgeField(P, mesh), path)


# ------------------------------------------------------------ tangent frame

def frame_of(v):
    mesh = build_cube_mesh(1)
    vals = np.tile(np.asarray(v, dtype=float), (8, 1))
    return build_tangent_frame(NodalField(vals, mesh))


def test_frame_examples():
    f = frame_of([0, 0, 1])
    assert np.array_equal(f.t1[0], [1.0, 0.0, 0.0])
    assert np.array_equal(f.t2[0], [0.0, 1.0, 0.0])
    f = frame_of([1, 0, 0])
    assert np.array_equal(f.t1[0], [0.0, 1.0, 0.0])
    assert np.array_equal(f.t2[0], [0.0, 0.0, 1.0])


def test_frame_invariants_random():
    mesh = build_cube_mesh(9)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(1000, 3))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    f = build_tangent_frame(NodalField(m, mesh))
    dot = lambda a, b: np.einsum("nc,nc->n", a, b)
    for err in (dot(f.t1, m), dot(f.t2, m), dot(f.t1, f.t2),
                dot(f.t1, f.t1) - 1, dot(f.t2, f.t2) - 1):
        assert np.abs(err).max() <= 1e-12


def test_frame_basis_roundtrip():
    mesh = build_cube_mesh(2)
    rng = np.random.default_rng(1)
    m = rng.normal(size=(27, 3))
    f = build_tangent_frame(NodalField(m / np.linalg.norm(m, axis=1, keepdims=True), mesh))
    x = rng.normal(size=54)
    assert np.allclose(f.basis() @ x, f.expand(x).ravel())
    assert np.allclose(f.reduce(f.expand(x)), x)


def test_frame_rejects_small_m():
    mesh = build_cube_mesh(1)
    with pytest.raises(InvariantViolation):
        build_tangent_frame(NodalField(np.full((8, 3), 0.1), mesh))


# ---------------------------------------------------------------- LLG step

def test_llg_constant_state_gives_zero_update():
    sim = Simulation(small(), m0=const((0.6, 0, 0.8)), P0=const((0, 0, 0)))
    state = sim.initial_state(sample_wiener_path(4, sim.k, 1))
    v = llg_step(sim, state, build_tangent_frame(state.m)).v.values
    assert np.abs(v).max() <= 1e-12


def test_llg_and_maxwell_match_dense_oracles():
    cfg = SimConfig(n=1, J=5, L=1, lambda1=0.7, lambda2=1.3, theta=0.6, mu0=2.0, sigma=1.5,
                    sigma_D=0.8)
    e = oracle_errors(cfg)
    assert e["llg"] <= 1e-10
    assert e["maxwell"] <= 1e-10
    assert e["maxwell_asym"] <= 1e-12
    assert e["maxwell_min_eig"] > 0


@pytest.mark.parametrize("g_mode", ["constant", "analytic"])
def test_llg_energy_identity(g_mode):
    cfg = small(n=3, lambda1=-0.8, lambda2=1.7, theta=0.9, g_mode=g_mode, g_kappa=2.0)
    sim = Simulation(cfg)
    rng = np.random.default_rng(2)
    for _ in range(5):
        state = random_state(sim, rng, W=rng.normal())
        v = llg_step(sim, state, build_tangent_frame(state.m)).v.values
        lhs = (cfg.lambda2 * np.einsum("nc,nc->", v, sim.p1.mass @ v)
               + cfg.mu * sim.k * cfg.theta * np.einsum("nc,nc->", v, sim.p1.stiffness @ v))
        rhs = np.einsum("nc,nc->", sim.llg_rhs_full(state.m, state.P, state.path.at_step(0)), v)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_llg_update_is_tangent():
    sim = Simulation(small(n=3, g_mode="analytic"))
    state = random_state(sim, np.random.default_rng(3))
    v = llg_step(sim, state, build_tangent_frame(state.m)).v.values
    assert np.abs(np.einsum("nc,nc->n", v, state.m.values)).max() <= 1e-10


# -------------------------------------------------------------- renormalize

def test_normalize_examples():
    mesh = build_cube_mesh(1)
    m = NodalField(np.tile([0.0, 0, 1], (8, 1)), mesh)
    assert np.array_equal(normalize_update(m, NodalField(np.zeros((8, 3)), mesh), 0.5).values,
                          m.values)
    out = normalize_update(m, NodalField(np.tile([2.0, 0, 0], (8, 1)), mesh), 0.5).values
    assert np.allclose(out[0], np.array([1.0, 0, 1]) / np.sqrt(2), atol=1e-16)


def test_normalize_rejects_nontangent_shrink():
    mesh = build_cube_mesh(1)
    m = NodalField(np.tile([0.0, 0, 1], (8, 1)), mesh)
    with pytest.raises(InvariantViolation):
        normalize_update(m, NodalField(np.tile([0.0, 0, -0.5], (8, 1)), mesh), 1.0)


def test_normalization_energy_decrease():
    assert normalization_gaps(n=3, draws=100).max() <= 1e-10


# ---------------------------------------------------------------- Maxwell

def test_maxwell_constant_field_is_fixed_point():
    sim = Simulation(small(), m0=const((0, 0.6, 0.8)))
    P = interpolate_edge(const((1.0, -2.0, 30.0)), sim.mesh)
    state = StepState(1, sim.m0, P, sample_wiener_path(4, sim.k, 5))
    P_next = maxwell_step(sim, state).coeffs
    assert np.abs(P_next - P.coeffs).max() <= 1e-9 * np.abs(P.coeffs).max()


def test_maxwell_matrix_spd():
    sim = Simulation(small(n=1))
    A = sim.maxwell_matrix.toarray()
    assert np.abs(A - A.T).max() <= 1e-12
    assert np.linalg.eigvalsh(A).min() > 0


def test_maxwell_on_subregion_mesh():
    mesh = build_cube_mesh(4, d_region=((0.25, 0.25, 0.25), (0.75, 0.75, 0.75)))
    cfg = small(n=4, J=3, sigma=2.0, sigma_D=0.5)
    sim = Simulation(cfg, mesh=mesh)
    res = run_path(sim, sample_wiener_path(3, cfg.k, 1))
    assert max(res.max_unit_deviation) <= 1e-12
    assert all(math.isfinite(e) for e in res.trace.field)


# ------------------------------------------------------------------ energies

def test_energy_examples():
    sim = Simulation(small(n=3))
    m = NodalField(np.tile([0.0, 0.0, 1.0], (sim.mesh.n_d_vertices, 1)), sim.mesh)
    P = interpolate_edge(const((0, 0, 30.0)), sim.mesh)
    e = compute_energies(sim, m, P)
    assert e.exchange == pytest.approx(0.0, abs=1e-12)
    assert e.field == pytest.approx(900.0, rel=1e-12)
    assert e.curl == pytest.approx(0.0, abs=1e-9)


def test_exchange_matches_per_tet_gradients():
    sim = Simulation(small(n=4))
    m = sim.m0.values
    mesh = sim.mesh
    total = 0.0
    for ti, t in enumerate(mesh.d_tets):
        vol, G = local_geometry(mesh, t)
        grad = G.T @ m[mesh.d_tet_nodes[ti]]
        total += vol * np.sum(grad ** 2)
    assert compute_energies(sim, sim.m0, sim.P0).exchange == pytest.approx(total, rel=1e-12)


def test_initial_field_is_uniform_vertical():
    sim = Simulation(small(n=2, H_s=30.0))
    ref = interpolate_edge(const((0, 0, 30.0)), sim.mesh)
    assert np.abs(sim.P0.coeffs - ref.coeffs).max() <= 1e-13


# -------------------------------------------------------------------- run_path

def test_run_path_trivial_constant_state():
    cfg = small(J=1)
    sim = Simulation(cfg, m0=const((0, 0, 1)), P0=const((0, 0, 0)))
    res = run_path(sim, sample_wiener_path(1, cfg.k, 3))
    assert np.allclose(res.trace.exchange, 0.0, atol=1e-12)
    assert res.trace.field == [0.0, 0.0]
    assert np.abs(res.final.m.values - sim.m0.values).max() <= 1e-12
    assert res.sphere_error_sq == pytest.approx(0.0, abs=1e-28)


def test_run_path_constraints_with_bound_probes():
    cfg = small(n=3, J=5, g_mode="analytic", g_kappa=1.5)
    sim = Simulation(cfg)
    res = run_path(sim, sample_wiener_path(cfg.J, cfg.k, 9), Probes(check_bounds=True,
                                                                   keep_states=True))
    assert len(res.states) == cfg.J + 1
    assert max(res.max_unit_deviation) <= 1e-12
    assert max(res.max_tangency) <= 1e-10
    for st_ in res.states[1:]:
        assert np.abs(np.linalg.norm(st_.m.values, axis=1) - 1).max() <= 1e-12


def test_run_path_rejects_mismatched_path():
    cfg = small()
    with pytest.raises(ValueError):
        run_path(Simulation(cfg), sample_wiener_path(cfg.J + 1, cfg.k, 1))


def test_interpolant_norm_at_most_one():
    sim = Simulation(small(n=3))
    state = random_state(sim, np.random.default_rng(4))
    u = np.einsum("qa,tac->tqc", np.random.default_rng(5).dirichlet(np.ones(4), 50),
                  state.m.values[sim.mesh.d_tet_nodes])
    assert np.linalg.norm(u, axis=-1).max() <= 1 + 1e-15


def test_sphere_defect_zero_for_constant_field():
    sim = Simulation(small())
    m = NodalField(np.tile([0.0, 0.0, 1.0], (sim.mesh.n_d_vertices, 1)), sim.mesh)
    assert sphere_defect_sq(sim, m) == pytest.approx(0.0, abs=1e-28)


# ---------------------------------------------------------------- theta gate

def test_theta_gate():
    cfg = small(n=4, J=4, theta=0.3)
    sim = Simulation(cfg)
    with pytest.raises(ConfigError):
        run_path(sim, sample_wiener_path(4, cfg.k, 1))


def test_theta_gate_override_never_silent_nan():
    cfg = small(n=4, J=4, theta=0.3, allow_unstable_theta=True)
    sim = Simulation(cfg)
    try:
        res = run_path(sim, sample_wiener_path(4, cfg.k, 1))
    except InvariantViolation:
        return
    assert all(math.isfinite(x) for x in res.trace.total)


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_theta_half_and_one_stable_at_k_equals_h(theta):
    cfg = small(n=4, J=4, theta=theta)
    res = run_path(Simulation(cfg), sample_wiener_path(4, cfg.k, 1))
    tot = res.trace.total
    assert max(tot) <= 10 * tot[0]


# ------------------------------------------------------------ sphere scaling

@pytest.mark.slow
def test_run_path_sphere_error_slope():
    errs = []
    for n in (2, 4, 8):
        cfg = SimConfig(n=n, J=n, L=1)
        res = run_path(Simulation(cfg), sample_wiener_path(cfg.J, cfg.k, cfg.base_seed, 0))
        errs.append(math.sqrt(res.sphere_error_sq))
    assert errs[0] > errs[1] > errs[2]
    slope = fitted_slope([1 / 4, 1 / 16, 1 / 64], errs)
    assert slope >= 0.8, f"fitted slope {slope:.4f}"
