"""Triangular surface meshes, region labels and RWG bookkeeping."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REGIONS = ("design", "fixed", "passive")
DIAGONAL_RULES = ("fixed", "alternating", "crossed")


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulated surface.

    Parameters
    ----------
    nodes : (P, 3) array
        Node coordinates in meters.
    triangles : (T, 3) int array
        Zero-based node indices.
    region : sequence of str
        Per-triangle label, one of ``design``, ``fixed``, ``passive``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    region: tuple[str, ...]
    areas: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must have shape (P, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
            raise MeshError("triangles must have shape (T, 3) with T >= 1")
        region = tuple(str(r) for r in self.region)
        if len(region) != len(tris):
            raise MeshError(f"region has {len(region)} labels for {len(tris)} triangles")
        for t, r in enumerate(region):
            if r not in REGIONS:
                raise MeshError(f"triangle {t}: unknown region label {r!r}")
        for t, tri in enumerate(tris):
            if tri.min() < 0 or tri.max() >= len(nodes):
                raise MeshError(f"triangle {t}: node index out of range")
            if len(set(tri.tolist())) != 3:
                raise MeshError(f"triangle {t}: repeated node")
        p = nodes[tris]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        scale = np.max(np.linalg.norm(p[:, 1:] - p[:, :1], axis=2), axis=1)
        bad = np.flatnonzero(areas <= 1e-12 * scale**2)
        if bad.size:
            raise MeshError(f"triangle {int(bad[0])}: degenerate (zero area)")
        nodes.setflags(write=False)
        tris.setflags(write=False)
        areas.setflags(write=False)
        centroids = p.mean(axis=1)
        centroids.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "centroids", centroids)
        _edge_map(self)  # non-manifold check

    @property
    def T(self) -> int:
        return len(self.triangles)

    @property
    def normals(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def region_mask(self, label: str) -> np.ndarray:
        return np.array([r == label for r in self.region], dtype=bool)

    @property
    def design_mask(self) -> np.ndarray:
        return self.region_mask("design")

    def with_region(self, region) -> Mesh:
        return Mesh(self.nodes, self.triangles, tuple(region))

    def scaled(self, factor: float) -> Mesh:
        """Geometric rescaling; region labels are kept."""
        return Mesh(self.nodes * float(factor), self.triangles, self.region)

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(self.nodes.tobytes())
        h.update(self.triangles.tobytes())
        h.update(",".join(self.region).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class RegionSpec:
    """Partition of triangle indices into design, fixed and passive sets."""

    design: np.ndarray
    fixed: np.ndarray
    passive: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> RegionSpec:
        return cls(*(np.flatnonzero(mesh.region_mask(r)) for r in REGIONS))

    def fixed_values(self, T: int) -> np.ndarray:
        """Density template: 1 on fixed, 0 on passive, NaN on design."""
        rho = np.full(T, np.nan)
        rho[self.fixed] = 1.0
        rho[self.passive] = 0.0
        return rho


@dataclass(frozen=True, eq=False)
class BasisSet:
    """RWG basis functions, one per interior edge.

    ``tri[n] = (plus, minus)`` with the lower triangle index as plus;
    ``free[n]`` holds the node opposite the edge in each triangle.
    ``local[t, i]`` is the basis attached to the edge opposite local
    vertex ``i`` of triangle ``t`` (or -1 on boundary edges) and
    ``sign[t, i]`` is +1/-1 for the plus/minus side.
    """

    edges: np.ndarray
    tri: np.ndarray
    free: np.ndarray
    length: np.ndarray
    local: np.ndarray
    sign: np.ndarray

    @property
    def N(self) -> int:
        return len(self.edges)


def _edge_map(mesh: Mesh) -> dict:
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for t, tri in enumerate(mesh.triangles.tolist()):
        for i in range(3):
            a, b = tri[(i + 1) % 3], tri[(i + 2) % 3]
            key = (a, b) if a < b else (b, a)
            edges.setdefault(key, []).append((t, i))
    for key, adj in edges.items():
        if len(adj) > 2:
            raise MeshError(f"non-manifold edge {key} shared by triangles {[t for t, _ in adj]}")
    return edges


def build_rwg(mesh: Mesh) -> BasisSet:
    """One RWG function per edge shared by exactly two triangles."""
    emap = _edge_map(mesh)
    T = mesh.T
    local = -np.ones((T, 3), dtype=np.int64)
    sign = np.zeros((T, 3))
    edges, tri, free = [], [], []
    for key in sorted(emap):
        adj = emap[key]
        if len(adj) != 2:
            continue
        (tp, ip), (tm, im) = sorted(adj)
        n = len(edges)
        edges.append(key)
        tri.append((tp, tm))
        free.append((mesh.triangles[tp, ip], mesh.triangles[tm, im]))
        local[tp, ip], sign[tp, ip] = n, 1.0
        local[tm, im], sign[tm, im] = n, -1.0
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    length = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1) if len(edges) else np.zeros(0)
    arrays = [edges, np.array(tri, dtype=np.int64).reshape(-1, 2),
              np.array(free, dtype=np.int64).reshape(-1, 2), length, local, sign]
    for a in arrays:
        a.setflags(write=False)
    return BasisSet(*arrays)


def generate_plate_mesh(length: float, width: float, nx: int, ny: int,
                        diagonal_rule: str = "alternating", jitter: float = 0.0,
                        seed: int | None = None) -> Mesh:
    """Rectangular plate in the z=0 plane centred at the origin.

    ``fixed`` and ``alternating`` split each of the ``nx*ny`` cells into
    two triangles; ``crossed`` adds a centre node and yields four per cell.
    ``jitter`` displaces interior nodes by up to that fraction of a cell.
    """
    if length <= 0 or width <= 0:
        raise MeshError("plate dimensions must be positive")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    if diagonal_rule not in DIAGONAL_RULES:
        raise MeshError(f"unknown diagonal rule {diagonal_rule!r}")
    xs = np.linspace(-length / 2, length / 2, nx + 1)
    ys = np.linspace(-width / 2, width / 2, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = [np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])]

    def nid(i, j):
        return i * (ny + 1) + j

    tris = []
    if diagonal_rule == "crossed":
        cx, cy = np.meshgrid(0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1]), indexing="ij")
        nodes.append(np.column_stack([cx.ravel(), cy.ravel(), np.zeros(cx.size)]))
        base = (nx + 1) * (ny + 1)
        for i in range(nx):
            for j in range(ny):
                c = base + i * ny + j
                a, b, d, e = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
                tris += [(a, b, c), (b, d, c), (d, e, c), (e, a, c)]
    else:
        for i in range(nx):
            for j in range(ny):
                a, b, d, e = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
                if diagonal_rule == "fixed" or (i + j) % 2 == 0:
                    tris += [(a, b, d), (a, d, e)]
                else:
                    tris += [(a, b, e), (b, d, e)]
    nodes = np.vstack(nodes)
    if jitter:
        rng = np.random.default_rng(seed)
        h = np.array([length / nx, width / ny])
        inner = ((np.abs(nodes[:, 0]) < length / 2 - 1e-12 * length)
                 & (np.abs(nodes[:, 1]) < width / 2 - 1e-12 * width))
        nodes[inner, :2] += jitter * h * rng.uniform(-1, 1, size=(inner.sum(), 2))
    return Mesh(nodes, np.array(tris), ("design",) * len(tris))


def circumscribing_radius(mesh_or_points) -> float:
    """Radius of the smallest sphere enclosing all mesh nodes."""
    pts = mesh_or_points.nodes if isinstance(mesh_or_points, Mesh) else np.asarray(mesh_or_points, float)
    return minimal_enclosing_ball(pts)[1]


def _ball_from(support: list[np.ndarray]) -> tuple[np.ndarray, float]:
    if not support:
        return np.zeros(3), -1.0
    p0 = support[0]
    if len(support) == 1:
        return p0.copy(), 0.0
    A = np.array([s - p0 for s in support[1:]])
    # centre c = p0 + A^T x with |c - p0| = |c - p_i|  ->  2 A A^T x = |A_i|^2
    G = 2 * A @ A.T
    rhs = np.einsum("ij,ij->i", A, A)
    try:
        x = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(G, rhs, rcond=None)[0]
    c = p0 + A.T @ x
    return c, float(np.linalg.norm(c - p0))


def minimal_enclosing_ball(points) -> tuple[np.ndarray, float]:
    """Welzl's move-to-front algorithm, iterative up to 4 support points."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 3), axis=0)
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    scale = max(np.abs(pts).max(), 1.0)
    eps = 1e-12 * scale

    def inside(ball, p):
        return np.linalg.norm(p - ball[0]) <= ball[1] + eps

    def solve(n, fixed):
        ball = _ball_from(fixed)
        if len(fixed) == 4:
            return ball
        for i in range(n):
            if ball[1] < 0 or not inside(ball, pts[i]):
                ball = solve(i, fixed + [pts[i]])
        return ball

    c, r = solve(len(pts), [])
    return c, max(r, 0.0)


def save_mesh(mesh: Mesh, path) -> None:
    doc = {
        "nodes": [[float(v) for v in p] for p in mesh.nodes],
        "triangles": [[int(v) for v in t] for t in mesh.triangles],
        "region": list(mesh.region),
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n")


def load_mesh(path) -> Mesh:
    try:
        doc = json.loads(Path(path).read_text())
        nodes, triangles = doc["nodes"], doc["triangles"]
        region = doc.get("region", ["design"] * len(triangles))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 3),
                np.array(triangles, dtype=np.int64).reshape(-1, 3), region)
