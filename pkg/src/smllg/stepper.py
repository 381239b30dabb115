"""One time step of the linear tangent-plane scheme and the per-path run loop.

Per step ``j``:

1. solve for ``v`` in the tangent space at ``m^(j)`` (reduced 2N x 2N system
   in per-node orthonormal frames),
2. solve the eddy-current system for ``P^(j+1)`` (SPD, conjugate gradients),
3. renormalize ``m^(j) + k v`` at the nodes.

The LLG half uses the left endpoint ``t_j`` throughout; the Maxwell half is
implicit in ``P`` with its source taken at ``t_j``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .config import SimConfig, check_theta_stability
from .errors import InvariantViolation, SolverError
from .femcore import (EdgeField, NodalField, accumulate, accumulate_vector,
                      assemble_nedelec_matrices, assemble_p1_matrices, block3,
                      interpolate_edge, interpolate_nodal, load_vector, nodal_gradient,
                      nodal_values_at, whitney_basis, whitney_curls)
from .mesh import INSIDE_D, OUTSIDE_D, Mesh, build_cube_mesh, perturb_vertex, \
    verify_offdiagonal_condition
from .noise import GData, WienerPath, apply_exp_sG, rhk_at, rhk_bound_constant, tilted_g
from .quadrature import tet_rule
from .solvers import conjugate_gradient, solve_general

log = logging.getLogger(__name__)

# Levi-Civita: (u x w)_c = eps[c, e, d] u_e w_d
EPS = np.zeros((3, 3, 3))
EPS[0, 1, 2] = EPS[1, 2, 0] = EPS[2, 0, 1] = 1.0
EPS[0, 2, 1] = EPS[2, 1, 0] = EPS[1, 0, 2] = -1.0

SOLVER_RTOL = 1e-10
UNIT_TOL = 1e-12
TANGENCY_TOL = 1e-10


# ------------------------------------------------------------ initial data

def initial_magnetization(x: np.ndarray) -> np.ndarray:
    """Vortex profile centred on the vertical line through (0.5, 0.5)."""
    xs = np.zeros_like(x)
    xs[:, :2] = x[:, :2] - 0.5
    r = np.linalg.norm(xs, axis=1)
    out = np.tile([0.0, 0.0, -1.0], (len(x), 1))
    core = r < 0.5
    A = (1.0 - 2.0 * r[core]) ** 4 / 4.0
    den = A ** 2 + r[core] ** 2
    out[core, :2] = 2.0 * xs[core, :2] * A[:, None] / den[:, None]
    out[core, 2] = (A ** 2 - r[core] ** 2) / den
    return out


def mesh_for(config: SimConfig) -> Mesh:
    mesh = build_cube_mesh(config.n)
    if config.mesh_perturb:
        # stretch the top corner vertically; large values create obtuse dihedral angles
        top = mesh.n_vertices - 1
        mesh = perturb_vertex(mesh, top, (0.0, 0.0, config.mesh_perturb * mesh.spacing[2]))
    return mesh


def gdata_for(config: SimConfig, mesh: Mesh) -> GData:
    if config.g_mode == "constant":
        return GData.constant_field(mesh)
    return GData.from_callbacks(mesh, *tilted_g(config.g_kappa))


# ------------------------------------------------------------------- types

@dataclass(frozen=True, eq=False)
class TangentFrame:
    t1: np.ndarray  # (N, 3)
    t2: np.ndarray  # (N, 3)

    def basis(self) -> sp.csr_matrix:
        """``(3N, 2N)`` map from frame coordinates ``(a_n, b_n)`` to nodal 3-vectors."""
        N = len(self.t1)
        rows = (3 * np.arange(N)[:, None, None] + np.arange(3)[None, None, :])
        rows = np.broadcast_to(rows, (N, 2, 3))
        cols = np.broadcast_to((2 * np.arange(N))[:, None, None] + np.arange(2)[None, :, None],
                               (N, 2, 3))
        vals = np.stack([self.t1, self.t2], axis=1)
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * N, 2 * N))

    def reduce(self, b: np.ndarray) -> np.ndarray:
        """Test a nodal load ``(N, 3)`` against the frame vectors -> ``(2N,)``."""
        return np.stack([np.einsum("nc,nc->n", self.t1, b),
                         np.einsum("nc,nc->n", self.t2, b)], axis=1).ravel()

    def expand(self, x: np.ndarray) -> np.ndarray:
        x = x.reshape(-1, 2)
        return x[:, 0, None] * self.t1 + x[:, 1, None] * self.t2


@dataclass(frozen=True, eq=False)
class StepState:
    j: int
    m: NodalField
    P: EdgeField
    path: Optional[WienerPath] = None


@dataclass
class EnergyTrace:
    t: List[float] = dc_field(default_factory=list)
    exchange: List[float] = dc_field(default_factory=list)   # ||grad m||^2_D
    field: List[float] = dc_field(default_factory=list)      # ||P||^2 on the cavity
    curl: List[float] = dc_field(default_factory=list)       # ||curl P||^2 on the cavity

    def append(self, t, energies):
        self.t.append(float(t))
        self.exchange.append(energies.exchange)
        self.field.append(energies.field)
        self.curl.append(energies.curl)

    @property
    def total(self) -> List[float]:
        return [a + b for a, b in zip(self.exchange, self.field)]

    def as_array(self) -> np.ndarray:
        """Columns: t, exchange, field, total, curl."""
        return np.column_stack([self.t, self.exchange, self.field, self.total, self.curl])


@dataclass(frozen=True)
class Energies:
    exchange: float
    field: float
    curl: float


# ------------------------------------------------------------- simulation

class Simulation:
    """Mesh, matrices and initial data for one configuration.

    Everything here is immutable once built and may be shared by paths.
    """

    def __init__(self, config: SimConfig, mesh: Mesh = None, gdata: GData = None,
                 m0=initial_magnetization, P0=None):
        self.config = config
        self.mesh = mesh_for(config) if mesh is None else mesh
        mesh = self.mesh
        self.k = config.k
        self.rule = tet_rule(4)
        self.gdata = gdata_for(config, mesh) if gdata is None else gdata
        self.condition = verify_offdiagonal_condition(mesh)
        if not self.condition.passed:
            log.warning("mesh violates the stiffness sign condition (worst off-diagonal %.3e);"
                        " renormalization may increase the exchange energy",
                        self.condition.worst_entry)

        self.p1 = assemble_p1_matrices(mesh)
        self.mass3 = block3(self.p1.mass)
        self.stiff3 = block3(self.p1.stiffness)
        sigma = {INSIDE_D: config.sigma_D, OUTSIDE_D: config.sigma}
        self.ned = assemble_nedelec_matrices(mesh, sigma)
        self.curlcurl_unit = assemble_nedelec_matrices(mesh, 1.0).curlcurl
        self.maxwell_matrix = (config.mu0 / self.k * self.ned.mass + self.ned.curlcurl).tocsr()

        # quadrature-point data on D
        pts = self.rule.points
        self.vol_d = mesh.volumes[mesh.d_tets]
        self.whitney_d = whitney_basis(mesh, pts, mesh.d_tets)        # (T_D, 6, Q, 3)
        self.curls_d = whitney_curls(mesh, mesh.d_tets)               # (T_D, 6, 3)
        self.gh_q = nodal_values_at(mesh, self.gdata.g, pts)          # (T_D, Q, 3)
        self.dgh = nodal_gradient(mesh, self.gdata.g)                 # (T_D, 3, 3)
        # int over the reference tet of lambda_a lambda_b lambda_p (exact, degree 3)
        self.triple = np.einsum("q,qa,qb,qp->abp", self.rule.weights, pts, pts, pts)
        nodes = mesh.d_tet_nodes
        ra = 3 * nodes[:, :, None, None, None] + np.arange(3)[None, None, None, :, None]
        cb = 3 * nodes[:, None, :, None, None] + np.arange(3)[None, None, None, None, :]
        shape = (len(nodes), 4, 4, 3, 3)
        self._cross_rows = np.broadcast_to(ra, shape).ravel()
        self._cross_cols = np.broadcast_to(cb, shape).ravel()

        self.m0 = interpolate_nodal(m0, mesh)
        self.P0 = interpolate_edge(self.initial_field if P0 is None else P0, mesh)

    # ---- initial field: P0 = H0 + zero-extended M0, H0 = H0* - chi_D M0
    def chi_D(self, x):
        dv = self.mesh.vertices[self.mesh.d_vertices]
        lo, hi = dv.min(axis=0), dv.max(axis=0)
        return np.all((x >= lo) & (x <= hi), axis=1).astype(float)

    def initial_field(self, x):
        H0_star = np.tile([0.0, 0.0, self.config.H_s], (len(x), 1))
        M0_ext = self.chi_D(x)[:, None] * initial_magnetization(x)
        H0 = H0_star - M0_ext
        return H0 + M0_ext

    def initial_state(self, path: Optional[WienerPath] = None) -> StepState:
        return StepState(0, self.m0, self.P0, path)

    # ---- assembly pieces
    def cross_matrix(self, m: NodalField) -> sp.csr_matrix:
        """``<m x v, w>_D`` on interleaved nodal 3-vectors (row = test, col = trial)."""
        mloc = m.values[self.mesh.d_tet_nodes]                                  # (T, 4, 3)
        B = self.vol_d[:, None, None, None] * np.einsum("abp,tpe->tabe", self.triple, mloc)
        vals = np.einsum("ced,tabe->tabcd", EPS, B)
        N3 = 3 * self.mesh.n_d_vertices
        return accumulate(self._cross_rows, self._cross_cols, vals, (N3, N3))

    def llg_matrix_full(self, m: NodalField) -> sp.csr_matrix:
        c = self.config
        return (c.lambda2 * self.mass3 - c.lambda1 * self.cross_matrix(m)
                + (c.mu * self.k * c.theta) * self.stiff3).tocsr()

    def rotated_field_at_quadrature(self, P: EdgeField, s: float) -> np.ndarray:
        """``e^{s G_h} P`` at the D quadrature points."""
        coeffs = P.coeffs[self.mesh.tet_edges[self.mesh.d_tets]]
        Pq = np.einsum("ts,tsqc->tqc", coeffs, self.whitney_d)
        return apply_exp_sG(Pq, self.gh_q, s)

    def llg_rhs_full(self, m: NodalField, P: EdgeField, W: float) -> np.ndarray:
        """Nodal load ``(N, 3)`` of the LLG right-hand side."""
        c = self.config
        mesh = self.mesh
        b = -c.mu * (self.p1.stiffness @ m.values)
        if not self.gdata.constant and W != 0.0:
            R = rhk_at(m, self.gdata, W, self.rule.points, c.lambda1, c.lambda2)
            b -= load_vector(mesh, self.rule, R)
        b += c.mu * load_vector(mesh, self.rule, self.rotated_field_at_quadrature(P, -W))
        return b

    def curl_rotated_m(self, m: NodalField, s: float) -> np.ndarray:
        """``curl(e^{s G_h} m)`` at D quadrature points, by the product rule."""
        mesh = self.mesh
        u = nodal_values_at(mesh, m.values, self.rule.points)          # (T, Q, 3)
        Du = nodal_gradient(mesh, m.values)[:, None]                   # (T, 1, 3, 3)
        g = self.gh_q
        Dg = self.dgh[:, None]
        sn, cs = math.sin(s), 1.0 - math.cos(s)
        ug = np.cross(u, g)
        D_ug = np.cross(Du, g[..., None, :]) + np.cross(u[..., None, :], Dg)
        J = Du + sn * D_ug + cs * (np.cross(D_ug, g[..., None, :]) + np.cross(ug[..., None, :], Dg))
        J = np.broadcast_to(J, u.shape[:2] + (3, 3))
        return np.stack([J[..., 1, 2] - J[..., 2, 1],
                         J[..., 2, 0] - J[..., 0, 2],
                         J[..., 0, 1] - J[..., 1, 0]], axis=-1)

    def maxwell_rhs(self, m: NodalField, P: EdgeField, W: float) -> np.ndarray:
        c = self.config
        mesh = self.mesh
        curl_q = self.curl_rotated_m(m, W)
        local = np.einsum("t,q,tqc,tsc->ts", self.vol_d, self.rule.weights, curl_q, self.curls_d)
        src = accumulate_vector(mesh.tet_edges[mesh.d_tets], local, mesh.n_edges)
        return c.mu0 / self.k * (self.ned.mass @ P.coeffs) + c.sigma_D * src


# ------------------------------------------------------------- operations

def build_tangent_frame(m: NodalField) -> TangentFrame:
    """Per-node orthonormal basis of the plane orthogonal to ``m``.

    ``t1`` is the normalized projection of the coordinate axis least aligned
    with ``m`` (lowest index on ties); ``t2 = m x t1``.
    """
    v = m.values
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms < 0.5):
        raise InvariantViolation(f"cannot build tangent frame: min |m| = {norms.min():.3e}")
    mh = v / norms[:, None]
    axis = np.argmin(np.abs(mh), axis=1)
    e = np.zeros_like(mh)
    e[np.arange(len(mh)), axis] = 1.0
    t1 = e - np.einsum("nc,nc->n", e, mh)[:, None] * mh
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(mh, t1)
    return TangentFrame(t1, t2)


@dataclass(frozen=True)
class LLGSolution:
    v: NodalField
    system_matrix: sp.csr_matrix
    rhs: np.ndarray
    relative_residual: float


def llg_system(sim: Simulation, state: StepState, frame: TangentFrame):
    W = state.path.at_step(state.j) if state.path is not None else 0.0
    Q = frame.basis()
    A = (Q.T @ sim.llg_matrix_full(state.m) @ Q).tocsr()
    b = frame.reduce(sim.llg_rhs_full(state.m, state.P, W))
    return A, b


def llg_step(sim: Simulation, state: StepState, frame: TangentFrame) -> LLGSolution:
    """Solve the reduced tangent-plane system for the update velocity ``v``."""
    A, b = llg_system(sim, state, frame)
    try:
        x, info = solve_general(A, b, rtol=SOLVER_RTOL)
    except SolverError as exc:
        exc.step = state.j
        raise
    if not np.all(np.isfinite(x)):
        raise InvariantViolation("LLG solve produced non-finite values", step=state.j)
    v = frame.expand(x)
    return LLGSolution(NodalField(v, state.m.mesh), A, b, info.relative_residual)


def normalize_update(m: NodalField, v: NodalField, k: float) -> NodalField:
    w = m.values + k * v.values
    den = np.linalg.norm(w, axis=1)
    if not np.all(np.isfinite(den)) or den.min() < 1.0 - 1e-10:
        raise InvariantViolation(
            f"|m + k v| fell below 1 (min {np.nanmin(den):.3e}); update not tangent")
    return NodalField(w / den[:, None], m.mesh)


def maxwell_step(sim: Simulation, state: StepState, m_prev: Optional[NodalField] = None) -> EdgeField:
    """Implicit eddy-current step ``P^(j) -> P^(j+1)``.

    The source uses ``m_prev`` (default ``state.m``), i.e. the magnetization at ``t_j``.
    """
    m = state.m if m_prev is None else m_prev
    W = state.path.at_step(state.j) if state.path is not None else 0.0
    b = sim.maxwell_rhs(m, state.P, W)
    try:
        x, _ = conjugate_gradient(sim.maxwell_matrix, b, x0=state.P.coeffs, rtol=SOLVER_RTOL)
    except SolverError as exc:
        exc.step = state.j
        raise
    if not np.all(np.isfinite(x)):
        raise InvariantViolation("Maxwell solve produced non-finite values", step=state.j)
    return EdgeField(x, sim.mesh)


def compute_energies(sim: Simulation, m: NodalField, P: EdgeField) -> Energies:
    exch = float(np.einsum("nc,nc->", m.values, sim.p1.stiffness @ m.values))
    fld = float(P.coeffs @ (sim.ned.mass @ P.coeffs))
    crl = float(P.coeffs @ (sim.curlcurl_unit @ P.coeffs))
    # semidefinite forms; clip round-off below zero (nan passes through)
    return Energies(*(x if not x < 0.0 else 0.0 for x in (exch, fld, crl)))


def sphere_defect_sq(sim: Simulation, m: NodalField) -> float:
    """``int_D (1 - |m|)^2`` by quadrature."""
    u = nodal_values_at(sim.mesh, m.values, sim.rule.points)
    d = (1.0 - np.linalg.norm(u, axis=-1)) ** 2
    return float(np.einsum("t,q,tq->", sim.vol_d, sim.rule.weights, d))


@dataclass
class Probes:
    """Optional per-step diagnostics collected by :func:`run_path`."""
    check_bounds: bool = False      # normalization-energy and noise-operator bounds each step
    keep_states: bool = False


@dataclass
class PathResult:
    trace: EnergyTrace
    sphere_error_sq: float
    final: StepState
    max_unit_deviation: List[float] = dc_field(default_factory=list)   # per step, after renorm
    max_tangency: List[float] = dc_field(default_factory=list)         # per step, |v.m| at nodes
    states: List[StepState] = dc_field(default_factory=list)


def run_path(sim: Simulation, path: WienerPath, probes: Optional[Probes] = None) -> PathResult:
    """Run all ``J`` steps of the scheme along one Wiener path."""
    cfg = sim.config
    probes = Probes() if probes is None else probes
    check_theta_stability(cfg)
    if path.J != cfg.J:
        raise ValueError(f"path has {path.J} steps, config expects {cfg.J}")
    k = sim.k
    state = sim.initial_state(path)
    trace = EnergyTrace()
    trace.append(0.0, compute_energies(sim, state.m, state.P))
    result = PathResult(trace, 0.0, state)
    if probes.keep_states:
        result.states.append(state)
    if probes.check_bounds:
        c_R = rhk_bound_constant(sim.gdata, cfg.mu, float(sim.vol_d.sum()))
    err_terms = []
    for j in range(cfg.J):
        err_terms.append(k * sphere_defect_sq(sim, state.m))
        frame = build_tangent_frame(state.m)
        sol = llg_step(sim, state, frame)
        v = sol.v
        tang = float(np.abs(np.einsum("nc,nc->n", v.values, state.m.values)).max())
        if tang > TANGENCY_TOL:
            raise InvariantViolation(f"step {j}: |v.m| = {tang:.3e} at a node", step=j)
        P_next = maxwell_step(sim, state)
        try:
            m_next = normalize_update(state.m, v, k)
        except InvariantViolation as exc:
            exc.step = j
            raise
        dev = float(np.abs(np.linalg.norm(m_next.values, axis=1) - 1.0).max())
        if dev > UNIT_TOL:
            raise InvariantViolation(f"step {j}: nodal |m| off by {dev:.3e}", step=j)
        if probes.check_bounds:
            _check_step_bounds(sim, state, v, m_next, c_R, j)
        state = StepState(j + 1, m_next, P_next, path)
        energies = compute_energies(sim, state.m, state.P)
        if not all(math.isfinite(e) for e in (energies.exchange, energies.field, energies.curl)):
            raise InvariantViolation(f"step {j}: non-finite energy", step=j)
        trace.append((j + 1) * k, energies)
        result.max_unit_deviation.append(dev)
        result.max_tangency.append(tang)
        if probes.keep_states:
            result.states.append(state)
    result.sphere_error_sq = math.fsum(err_terms)
    result.final = state
    return result


def _check_step_bounds(sim, state, v, m_next, c_R, j):
    k = sim.k
    K = sim.p1.stiffness
    if sim.condition.passed:
        w = state.m.values + k * v.values
        before = float(np.einsum("nc,nc->", w, K @ w))
        after = float(np.einsum("nc,nc->", m_next.values, K @ m_next.values))
        if after > before + 1e-10 * max(1.0, before):
            raise InvariantViolation(
                f"step {j}: renormalization raised the exchange energy ({before} -> {after})",
                step=j)
    W = state.path.at_step(j) if state.path is not None else 0.0
    Pq = sim.rotated_field_at_quadrature(state.P, 0.0)
    rot = sim.rotated_field_at_quadrature(state.P, -W)
    if np.any(np.linalg.norm(rot, axis=-1) > np.linalg.norm(Pq, axis=-1) * (1 + 1e-12) + 1e-12):
        raise InvariantViolation(f"step {j}: rotation increased |P| pointwise", step=j)
    if not sim.gdata.constant:
        cfg = sim.config
        R = rhk_at(state.m, sim.gdata, W, sim.rule.points, cfg.lambda1, cfg.lambda2)
        r2 = float(np.einsum("t,q,tq->", sim.vol_d, sim.rule.weights, (R ** 2).sum(-1)))
        g2 = float(np.einsum("nc,nc->", state.m.values, sim.p1.stiffness @ state.m.values))
        if r2 > c_R * (1.0 + g2):
            raise InvariantViolation(f"step {j}: ||R||^2 = {r2:.3e} exceeds c(1+||grad m||^2)",
                                     step=j)
