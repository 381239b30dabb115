"""Self-check suites behind ``smllg check``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .config import SimConfig
from .femcore import EdgeField, NodalField, assemble_p1_matrices
from .mesh import INSIDE_D, build_cube_mesh, verify_offdiagonal_condition
from .noise import WienerPath, apply_exp_sG, apply_G, sample_wiener_path
from .oracles import dense_llg_system, dense_maxwell_system
from .stepper import (Simulation, StepState, build_tangent_frame, llg_step, maxwell_step,
                      mesh_for, normalize_update, run_path)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _unit(rng, size):
    v = rng.normal(size=size)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def rotation_identities(n: int = 1000, seed: int = 1) -> Dict[str, float]:
    """Worst violation of each identity of ``e^{sG}`` over random draws."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n, 3))
    v = rng.normal(size=(n, 3))
    g = _unit(rng, (n, 3))
    s = rng.uniform(-2 * np.pi, 2 * np.pi, size=n)
    Gu = apply_G(u, g)
    G2u = apply_G(Gu, g)
    G3u = apply_G(G2u, g)
    eu = apply_exp_sG(u, g, s)
    # reference: Rodrigues rotation about g through angle -s
    c, sn = np.cos(-s)[:, None], np.sin(-s)[:, None]
    rod = u * c + np.cross(g, u) * sn + g * np.einsum("nc,nc->n", g, u)[:, None] * (1 - c)
    adj = np.einsum("nc,nc->n", eu, v) - np.einsum("nc,nc->n", u, apply_exp_sG(v, g, -s))
    return {
        "expansion": float(np.abs(eu - rod).max()),
        "adjoint": float(np.abs(adj).max()),
        "commutation": float(np.abs(apply_exp_sG(Gu, g, s) - apply_G(eu, g)).max()),
        "morphism": float(np.abs(apply_exp_sG(np.cross(u, v), g, s)
                                 - np.cross(eu, apply_exp_sG(v, g, s))).max()),
        "skew": float(np.abs(np.einsum("nc,nc->n", Gu, u)).max()),
        "G3=-G": float(np.abs(G3u + Gu).max()),
        "norm": float(np.abs(np.linalg.norm(eu, axis=1) - np.linalg.norm(u, axis=1)).max()),
        "group": float(np.abs(apply_exp_sG(eu, g, -s) - u).max()),
    }


def suite_rotation(config: SimConfig) -> SuiteResult:
    worst = rotation_identities()
    bad = {k: v for k, v in worst.items() if v > 1e-12}
    detail = "max violation %.1e" % max(worst.values())
    return SuiteResult("rotation", not bad, detail + (f"; failing: {sorted(bad)}" if bad else ""))


def suite_mesh(config: SimConfig) -> SuiteResult:
    fails = []
    for n in range(1, 8):
        r = verify_offdiagonal_condition(build_cube_mesh(n))
        if not r.passed:
            fails.append(f"kuhn n={n}: {r.worst_entry:.2e}")
    r = verify_offdiagonal_condition(mesh_for(config))
    if not r.passed:
        fails.append(f"configured mesh: worst off-diagonal {r.worst_entry:.3e}")
    return SuiteResult("mesh", not fails, "; ".join(fails) or "all off-diagonals <= 1e-12")


def oracle_errors(config: SimConfig, draws: int = 20, seed: int = 2) -> Dict[str, float]:
    """Relative gaps between sparse solves and dense oracles on the n=1 mesh."""
    cfg = config.replace(n=1, g_mode="constant", mesh_perturb=0.0)
    sim = Simulation(cfg)
    mesh = sim.mesh
    rng = np.random.default_rng(seed)
    g = sim.gdata.g[0]
    sig = np.where(mesh.region == INSIDE_D, cfg.sigma_D, cfg.sigma)
    llg = mx = 0.0
    for _ in range(draws):
        m = _unit(rng, (mesh.n_d_vertices, 3))
        P = rng.normal(size=mesh.n_edges) * cfg.H_s / 10
        W = float(rng.normal(scale=np.sqrt(cfg.T)))
        path = WienerPath(np.full(cfg.J + 1, W), cfg.k, 0)
        state = StepState(0, NodalField(m, mesh), EdgeField(P, mesh), path)
        frame = build_tangent_frame(state.m)
        sol = llg_step(sim, state, frame)
        A, b = dense_llg_system(mesh, m, frame.t1, frame.t2, P, W, g, cfg.lambda1, cfg.lambda2,
                                cfg.k, cfg.theta)
        v_ref = frame.expand(np.linalg.solve(A, b))
        llg = max(llg, np.abs(sol.v.values - v_ref).max() / max(np.abs(v_ref).max(), 1e-300))
        A, b = dense_maxwell_system(mesh, m, P, W, g, cfg.mu0, cfg.k, sig, cfg.sigma_D)
        P_ref = np.linalg.solve(A, b)
        P_new = maxwell_step(sim, state).coeffs
        mx = max(mx, np.abs(P_new - P_ref).max() / np.abs(P_ref).max())
    Adense = sim.maxwell_matrix.toarray()
    return {
        "llg": float(llg),
        "maxwell": float(mx),
        "maxwell_asym": float(np.abs(Adense - Adense.T).max() / np.abs(Adense).max()),
        "maxwell_min_eig": float(np.linalg.eigvalsh(Adense).min()),
    }


def suite_oracle(config: SimConfig) -> SuiteResult:
    e = oracle_errors(config)
    ok = (e["llg"] <= 1e-10 and e["maxwell"] <= 1e-10 and e["maxwell_asym"] <= 1e-12
          and e["maxwell_min_eig"] > 0)
    detail = ", ".join(f"{k}={v:.2e}" for k, v in e.items())
    return SuiteResult("oracle", ok, detail)


def normalization_gaps(n: int = 3, draws: int = 100, seed: int = 3) -> np.ndarray:
    """``||grad m_next||^2 - ||grad(m + k v)||^2`` over random tangent updates."""
    mesh = build_cube_mesh(n)
    K = assemble_p1_matrices(mesh).stiffness
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(draws):
        m = _unit(rng, (mesh.n_d_vertices, 3))
        v = rng.normal(size=m.shape)
        v -= np.einsum("nc,nc->n", v, m)[:, None] * m
        k = rng.uniform(0.01, 2.0)
        nxt = normalize_update(NodalField(m, mesh), NodalField(v, mesh), k).values
        w = m + k * v
        out.append(np.einsum("nc,nc->", nxt, K @ nxt) - np.einsum("nc,nc->", w, K @ w))
    return np.asarray(out)


def suite_constraint(config: SimConfig) -> SuiteResult:
    cfg = config.replace(n=min(config.n, 3), J=min(config.J, 5), mesh_perturb=0.0)
    sim = Simulation(cfg)
    worst_unit = worst_tan = 0.0
    for i in range(2):
        res = run_path(sim, sample_wiener_path(cfg.J, cfg.k, cfg.base_seed, i))
        worst_unit = max(worst_unit, max(res.max_unit_deviation))
        worst_tan = max(worst_tan, max(res.max_tangency))
    gaps = normalization_gaps()
    ok = bool(worst_unit <= 1e-12 and worst_tan <= 1e-10 and gaps.max() <= 1e-10)
    return SuiteResult("constraint", ok, f"| |m|-1 | <= {worst_unit:.1e}, |v.m| <= {worst_tan:.1e},"
                                         f" renorm energy gap <= {gaps.max():.1e}")


SUITES: Dict[str, Callable[[SimConfig], SuiteResult]] = {
    "rotation": suite_rotation,
    "mesh": suite_mesh,
    "oracle": suite_oracle,
    "constraint": suite_constraint,
}


def run_checks(config: SimConfig, names: List[str] = None) -> List[SuiteResult]:
    names = list(SUITES) if not names else names
    out = []
    for name in names:
        t0 = time.perf_counter()
        res = SUITES[name](config)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
