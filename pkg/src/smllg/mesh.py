"""Uniform tetrahedral meshes of boxes (Kuhn subdivision) and their entities.

Every cube of an ``n x n x n`` grid is split into the six path tetrahedra
that share the main diagonal from the cube's lowest to its highest corner.
All cubes use the same diagonal direction, so the split is conforming.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import ConfigError

OUTSIDE_D = 0
INSIDE_D = 1

# tet-local vertex pairs, in the order used for the six edge slots
LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

UNIT_BOX = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def tet_geometry(vertices: np.ndarray, tets: np.ndarray):
    """Signed volumes ``(T,)`` and barycentric gradients ``(T, 4, 3)``."""
    x = vertices[tets]
    B = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    det = np.linalg.det(B)
    vol = det / 6.0
    grads = np.empty((len(tets), 4, 3))
    # rows of B^{-1} are the gradients of lambda_1..lambda_3
    grads[:, 1:, :] = np.linalg.inv(B)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return vol, grads


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (V, 3)
    tets: np.ndarray              # (T, 4), positively oriented
    edges: np.ndarray             # (E, 2), a < b
    edge_tangent: np.ndarray      # (E, 3) unit, from edges[:, 0] to edges[:, 1]
    edge_length: np.ndarray       # (E,)
    tet_edges: np.ndarray         # (T, 6) global edge index per LOCAL_EDGES slot
    tet_edge_signs: np.ndarray    # (T, 6) +1 if local order matches global orientation
    region: np.ndarray            # (T,) INSIDE_D / OUTSIDE_D
    volumes: np.ndarray           # (T,)
    grads: np.ndarray             # (T, 4, 3) barycentric gradients
    h: float                      # maximal element diameter
    spacing: Optional[np.ndarray] = None   # grid spacing per axis, structured meshes only
    box: Optional[tuple] = None
    n: Optional[int] = None
    # D-submesh: tets inside D and the vertices they touch, renumbered locally
    d_tets: np.ndarray = field(init=False)
    d_vertices: np.ndarray = field(init=False)
    d_tet_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        d_tets = np.flatnonzero(self.region == INSIDE_D)
        d_vertices = np.unique(self.tets[d_tets])
        local = np.full(len(self.vertices), -1, dtype=np.int64)
        local[d_vertices] = np.arange(len(d_vertices))
        object.__setattr__(self, "d_tets", d_tets)
        object.__setattr__(self, "d_vertices", d_vertices)
        object.__setattr__(self, "d_tet_nodes", local[self.tets[d_tets]])
        for name in ("vertices", "tets", "edges", "edge_tangent", "edge_length", "tet_edges",
                     "tet_edge_signs", "region", "volumes", "grads", "d_tets", "d_vertices",
                     "d_tet_nodes"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_arrays(cls, vertices, tets, region=None, *, spacing=None, box=None, n=None) -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise ConfigError("tets must have shape (T, 4)")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise ConfigError("tet vertex index out of range")
        vol, grads = tet_geometry(vertices, tets)
        if np.any(vol <= 0):
            bad = int(np.flatnonzero(vol <= 0)[0])
            raise ConfigError(f"tet {bad} has nonpositive signed volume {vol[bad]:.3e}")
        if region is None:
            region = np.full(len(tets), INSIDE_D, dtype=np.int8)
        region = np.asarray(region, dtype=np.int8)

        pairs = np.stack([tets[:, [i, j]] for i, j in LOCAL_EDGES], axis=1)  # (T, 6, 2)
        lo = pairs.min(axis=2)
        hi = pairs.max(axis=2)
        keyed = np.stack([lo.ravel(), hi.ravel()], axis=1)
        edges, inverse = np.unique(keyed, axis=0, return_inverse=True)
        tet_edges = inverse.reshape(len(tets), 6)
        signs = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1).astype(np.int8)

        delta = vertices[edges[:, 1]] - vertices[edges[:, 0]]
        length = np.linalg.norm(delta, axis=1)
        tangent = delta / length[:, None]

        x = vertices[tets]
        diam = max(np.linalg.norm(x[:, i] - x[:, j], axis=1).max() for i, j in LOCAL_EDGES)
        if spacing is not None:
            spacing = np.asarray(spacing, dtype=float)
        return cls(vertices, tets, edges, tangent, length, tet_edges, signs, region, vol,
                   grads, float(diam), spacing, box, n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_d_vertices(self) -> int:
        return len(self.d_vertices)

    @property
    def cell_volume(self) -> float:
        """Volume weight ``h^3`` of the discrete Lp norm."""
        if self.spacing is not None:
            return float(np.prod(self.spacing))
        return self.h ** 3

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity and region tags, moved vertices."""
        return Mesh.from_arrays(vertices, self.tets, self.region, spacing=self.spacing,
                                box=self.box, n=self.n)


def _aligned_index(value: float, origin: float, step: float) -> int:
    idx = (value - origin) / step
    r = round(idx)
    if abs(idx - r) > 1e-9:
        raise ConfigError(f"D-region bound {value} is not on the grid (spacing {step})")
    return int(r)


def build_cube_mesh(n: int, box: Sequence[Sequence[float]] = UNIT_BOX,
                    d_region: Optional[Sequence[Sequence[float]]] = None) -> Mesh:
    """Kuhn mesh of an axis-aligned box with ``n`` cells per axis.

    ``d_region`` is a grid-aligned sub-box holding the ferromagnet; ``None``
    means the whole box. Tets are tagged by centroid membership.
    """
    if int(n) != n or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise ConfigError(f"invalid box {box!r}")
    spacing = (hi - lo) / n

    ticks = [lo[a] + spacing[a] * np.arange(n + 1) for a in range(3)]
    gi, gj, gk = np.meshgrid(*ticks, indexing="ij")
    vertices = np.stack([gi.ravel(), gj.ravel(), gk.ravel()], axis=1)
    # exact endpoints so the box bounds are reproduced bit for bit
    for a in range(3):
        vertices[np.isclose(vertices[:, a], hi[a], rtol=0, atol=1e-14 * (hi[a] - lo[a])), a] = hi[a]

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    cells = np.array(list(itertools.product(range(n), repeat=3)), dtype=np.int64)
    tets = []
    for perm in itertools.permutations(range(3)):
        path = [cells.copy()]
        for axis in perm:
            nxt = path[-1].copy()
            nxt[:, axis] += 1
            path.append(nxt)
        ids = np.stack([vid(p[:, 0], p[:, 1], p[:, 2]) for p in path], axis=1)
        # odd permutations are negatively oriented
        parity = sum(1 for a, b in itertools.combinations(perm, 2) if a > b) % 2
        if parity:
            ids = ids[:, [0, 1, 3, 2]]
        tets.append(ids)
    # order: cube-major, then permutation
    tets = np.stack(tets, axis=1).reshape(-1, 4)

    if d_region is None:
        region = np.full(len(tets), INSIDE_D, dtype=np.int8)
    else:
        dlo = np.asarray(d_region[0], dtype=float)
        dhi = np.asarray(d_region[1], dtype=float)
        for a in range(3):
            i0 = _aligned_index(dlo[a], lo[a], spacing[a])
            i1 = _aligned_index(dhi[a], lo[a], spacing[a])
            if not 0 <= i0 < i1 <= n:
                raise ConfigError(f"D-region {d_region!r} is not inside the box")
        centroids = vertices[tets].mean(axis=1)
        inside = np.all((centroids > dlo) & (centroids < dhi), axis=1)
        region = np.where(inside, INSIDE_D, OUTSIDE_D).astype(np.int8)

    box_t = (tuple(lo.tolist()), tuple(hi.tolist()))
    return Mesh.from_arrays(vertices, tets, region, spacing=spacing, box=box_t, n=n)


def perturb_vertex(mesh: Mesh, index: int, offset) -> Mesh:
    vertices = np.array(mesh.vertices)
    vertices[index] += np.asarray(offset, dtype=float)
    return mesh.with_vertices(vertices)


@dataclass(frozen=True)
class OffDiagonalReport:
    passed: bool
    worst_entry: float


def verify_offdiagonal_condition(mesh: Mesh, tol: float = 1e-12) -> OffDiagonalReport:
    """Check that the P1 stiffness matrix on D has no positive off-diagonal entry.

    This is the sign condition under which nodal renormalization does not
    increase the Dirichlet energy.
    """
    vol = mesh.volumes[mesh.d_tets]
    G = mesh.grads[mesh.d_tets]
    local = vol[:, None, None] * np.einsum("tai,tbi->tab", G, G)
    nodes = mesh.d_tet_nodes
    N = mesh.n_d_vertices
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    off = rows != cols
    dense_idx = rows[off] * N + cols[off]
    sums = np.bincount(dense_idx, weights=local.ravel()[off], minlength=N * N)
    touched = np.bincount(dense_idx, minlength=N * N) > 0
    worst = float(sums[touched].max()) if touched.any() else float("-inf")
    return OffDiagonalReport(passed=worst <= tol, worst_entry=worst)


def write_mesh(mesh: Mesh, stream: TextIO) -> None:
    """Plain-text dump: one section per entity kind, every row index-explicit.

    Layout::

        # smllg mesh v1
        h <float>
        vertices <V>
        <i> <x> <y> <z>
        tets <T>
        <i> <v0> <v1> <v2> <v3> <region>
        edges <E>
        <i> <a> <b>
        tet_edges <T>
        <i> <e0> <s0> ... <e5> <s5>
    """
    f = "{:.17g}".format
    stream.write("# smllg mesh v1\n")
    stream.write(f"h {f(mesh.h)}\n")
    stream.write(f"vertices {mesh.n_vertices}\n")
    for i, x in enumerate(mesh.vertices):
        stream.write(f"{i} {f(x[0])} {f(x[1])} {f(x[2])}\n")
    stream.write(f"tets {mesh.n_tets}\n")
    for i, (t, r) in enumerate(zip(mesh.tets, mesh.region)):
        stream.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]} {r}\n")
    stream.write(f"edges {mesh.n_edges}\n")
    for i, e in enumerate(mesh.edges):
        stream.write(f"{i} {e[0]} {e[1]}\n")
    stream.write(f"tet_edges {mesh.n_tets}\n")
    for i, (es, ss) in enumerate(zip(mesh.tet_edges, mesh.tet_edge_signs)):
        stream.write(f"{i} " + " ".join(f"{e} {s}" for e, s in zip(es, ss)) + "\n")


def read_mesh(stream: TextIO) -> Mesh:
    """Inverse of :func:`write_mesh` (edges are re-derived and cross-checked)."""
    lines = [ln.split() for ln in stream if ln.strip() and not ln.startswith("#")]
    pos = 0

    def section(name):
        nonlocal pos
        head = lines[pos]
        if head[0] != name:
            raise ConfigError(f"expected section {name!r}, got {head[0]!r}")
        count = int(head[1])
        rows = lines[pos + 1:pos + 1 + count]
        pos += 1 + count
        for want, row in enumerate(rows):
            if int(row[0]) != want:
                raise ConfigError(f"{name}: row index {row[0]} out of order")
        return rows

    if lines[pos][0] == "h":
        pos += 1
    verts = np.array([[float(v) for v in r[1:4]] for r in section("vertices")])
    trows = section("tets")
    tets = np.array([[int(v) for v in r[1:5]] for r in trows], dtype=np.int64)
    region = np.array([int(r[5]) for r in trows], dtype=np.int8)
    edges = np.array([[int(v) for v in r[1:3]] for r in section("edges")], dtype=np.int64)
    mesh = Mesh.from_arrays(verts, tets, region)
    if not np.array_equal(mesh.edges, edges.reshape(-1, 2)):
        raise ConfigError("edge section does not match tet connectivity")
    return mesh
