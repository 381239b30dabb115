"""Wiener paths, the rotation ``e^{sG}`` and the discrete noise-correction chain.

``G u = u x g``. With ``|g| = 1`` the operator ``e^{sG}`` is a rotation
about ``g`` through angle ``-s``; the three-term formula below is applied
verbatim even where ``|g_h| < 1`` (between nodes), where it only shrinks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .femcore import NodalField, nodal_gradient, nodal_values_at
from .mesh import Mesh

log = logging.getLogger(__name__)

_UINT64 = 2 ** 64


@dataclass(frozen=True, eq=False)
class WienerPath:
    values: np.ndarray  # W(t_j), j = 0..J
    k: float
    seed: int
    index: int = 0

    @property
    def J(self) -> int:
        return len(self.values) - 1

    def at_step(self, j: int) -> float:
        """Piecewise-constant (left endpoint) value on ``[t_j, t_{j+1})``."""
        return float(self.values[j])


def path_generator(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, path index)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) % _UINT64, int(index) % _UINT64]))


def sample_wiener_path(J: int, k: float, seed: int, index: int = 0) -> WienerPath:
    if J < 1 or not k > 0:
        raise ConfigError(f"need J >= 1 and k > 0, got J={J}, k={k}")
    incr = path_generator(seed, index).standard_normal(J) * np.sqrt(k)
    values = np.concatenate([[0.0], np.cumsum(incr)])
    values.setflags(write=False)
    return WienerPath(values, float(k), int(seed), int(index))


# ------------------------------------------------------------------ rotation

def apply_G(u, g):
    return np.cross(u, g)


def apply_exp_sG(u, g, s):
    """``u + sin(s) Gu + (1 - cos s) G^2 u``; ``s`` broadcasts against ``u[..., 0]``."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)[..., None]
    Gu = np.cross(u, g)
    return u + np.sin(s) * Gu + (1.0 - np.cos(s)) * np.cross(Gu, g)


# -------------------------------------------------------------------- g data

@dataclass(frozen=True, eq=False)
class GData:
    """Nodal data of the noise direction ``g`` on the D-vertices.

    ``grad[n, i, c]`` holds ``d g_c / d x_i`` at vertex ``n``; both ``grad``
    and ``lap`` are nodal interpolants of the exact derivatives.
    """
    g: np.ndarray     # (N, 3)
    grad: np.ndarray  # (N, 3, 3)
    lap: np.ndarray   # (N, 3)
    mesh: Mesh
    constant: bool = False

    def __post_init__(self):
        err = np.abs(np.linalg.norm(self.g, axis=1) - 1.0).max(initial=0.0)
        if err > 1e-12:
            raise ConfigError(f"g must have unit length at every vertex (max deviation {err:.2e})")

    @classmethod
    def constant_field(cls, mesh: Mesh, g=(0.0, 0.0, 1.0)) -> "GData":
        N = mesh.n_d_vertices
        gv = np.tile(np.asarray(g, dtype=float), (N, 1))
        return cls(gv, np.zeros((N, 3, 3)), np.zeros((N, 3)), mesh, constant=True)

    @classmethod
    def from_callbacks(cls, mesh: Mesh, value: Callable, gradient: Callable,
                       laplacian: Callable) -> "GData":
        x = mesh.vertices[mesh.d_vertices]
        return cls(np.asarray(value(x), dtype=float).reshape(-1, 3),
                   np.asarray(gradient(x), dtype=float).reshape(-1, 3, 3),
                   np.asarray(laplacian(x), dtype=float).reshape(-1, 3), mesh)


def tilted_g(kappa: float):
    """``g(x) = (sin k x1, 0, cos k x1)`` with its gradient and Laplacian.

    Unit length everywhere and equal to ``(0, 0, 1)`` on the plane ``x1 = 0``.
    """
    def value(x):
        a = kappa * x[:, 0]
        return np.stack([np.sin(a), np.zeros_like(a), np.cos(a)], axis=1)

    def gradient(x):
        a = kappa * x[:, 0]
        out = np.zeros((len(x), 3, 3))
        out[:, 0, 0] = kappa * np.cos(a)
        out[:, 0, 2] = -kappa * np.sin(a)
        return out

    def laplacian(x):
        return -kappa ** 2 * value(x)

    return value, gradient, laplacian


# ------------------------------------------------------- correction operators

class _Sampled:
    """P1 data of ``m`` and ``g`` evaluated at barycentric points of every D-tet."""

    def __init__(self, m: NodalField, gdata: GData, bary):
        mesh = m.mesh
        self.u = nodal_values_at(mesh, m.values, bary)                 # (T, Q, 3)
        Q = self.u.shape[1]
        self.Du = np.repeat(nodal_gradient(mesh, m.values)[:, None], Q, axis=1)
        self.gh = nodal_values_at(mesh, gdata.g, bary)
        self.Dgh = np.repeat(nodal_gradient(mesh, gdata.g)[:, None], Q, axis=1)
        self.Ig = nodal_values_at(mesh, gdata.grad, bary)              # (T, Q, 3, 3)
        self.Lg = nodal_values_at(mesh, gdata.lap, bary)

    def C(self, val, grad):
        """``val x I(lap g) + 2 sum_i d_i val x I(d_i g)`` from a value and its gradient."""
        return np.cross(val, self.Lg) + 2.0 * np.cross(grad, self.Ig).sum(axis=-2)

    def Ch(self):
        return self.C(self.u, self.Du)

    def Ch_Gh(self):
        # C_h applied to u x g_h, differentiated exactly by the product rule
        y = np.cross(self.u, self.gh)
        Dy = np.cross(self.Du, self.gh[..., None, :]) + np.cross(self.u[..., None, :], self.Dgh)
        return self.C(y, Dy)


class PointField:
    """A field that can be evaluated at barycentric points of every D-tet.

    ``bary`` is ``(Q, 4)`` (same points in every tet) or ``(T_D, Q, 4)``;
    the result is ``(T_D, Q, 3)``.
    """

    def __init__(self, fn):
        self._fn = fn

    def __call__(self, bary) -> np.ndarray:
        return self._fn(bary)


def compute_Ch(m: NodalField, gdata: GData) -> PointField:
    def ev(bary):
        if gdata.constant:
            return np.zeros(nodal_values_at(m.mesh, m.values, bary).shape)
        return _Sampled(m, gdata, bary).Ch()
    return PointField(ev)


def rhk_at(m: NodalField, gdata: GData, W_j: float, bary, lambda1=1.0, lambda2=1.0):
    if gdata.constant or W_j == 0.0:
        return np.zeros(nodal_values_at(m.mesh, m.values, bary).shape)
    s = _Sampled(m, gdata, bary)
    sn, cs = np.sin(W_j), 1.0 - np.cos(W_j)
    C = s.Ch()
    D = sn * C + cs * (np.cross(C, s.gh) + s.Ch_Gh())
    DG = np.cross(D, s.gh)
    Ct = D - sn * DG + cs * np.cross(DG, s.gh)
    u = s.u
    return lambda2 ** 2 * np.cross(u, np.cross(u, Ct)) - lambda1 ** 2 * Ct


def compute_Rhk(m: NodalField, gdata: GData, W_j: float, lambda1: float = 1.0,
                lambda2: float = 1.0) -> PointField:
    """Compose ``D_{h,k}``, then ``C~_{h,k}``, then ``R_{h,k}`` pointwise."""
    return PointField(lambda bary: rhk_at(m, gdata, W_j, bary, lambda1, lambda2))


def rhk_bound_constant(gdata: GData, mu: float, volume_d: float) -> float:
    """A constant ``c`` with ``||R_{h,k}(m)||^2 <= c (1 + ||grad m||^2)``.

    Valid for every ``m`` with unit nodal values and every ``W``; built from
    pointwise bounds ``|C u| <= a + 2 b |grad u|`` etc. with
    ``a = max|I lap g|``, ``b = max |I grad g|_F``, ``d = max |grad g_h|_F``.
    """
    mesh = gdata.mesh
    a = np.linalg.norm(gdata.lap, axis=1).max()
    b = np.linalg.norm(gdata.grad.reshape(len(gdata.grad), -1), axis=1).max()
    dgh = nodal_gradient(mesh, gdata.g)
    d = np.linalg.norm(dgh.reshape(len(dgh), -1), axis=1).max(initial=0.0)
    const = 5 * a + 4 * b * d
    return float(32 * mu ** 2 * max(const ** 2 * volume_d, 100 * b ** 2))


def reconstruct_M(m: NodalField, gdata: GData, W_t: float) -> NodalField:
    """Physical magnetization ``M = e^{W(t) G_h} m`` at the nodes."""
    dev = np.abs(np.linalg.norm(m.values, axis=1) - 1.0).max()
    if dev > 1e-10:
        log.warning("reconstruct_M: nodal |m| deviates from 1 by %.2e", dev)
    return NodalField(apply_exp_sG(m.values, gdata.g, W_t), m.mesh)
