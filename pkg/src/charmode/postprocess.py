"""Thresholding, smoothing, frequency sweeps and design I/O."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .assembly import assemble_impedance, assemble_material_elements
from .cma import (DegeneracyWarning, EigenSolverError, ModeSet, characteristic_angle,
                  modal_q, modal_significance, solve_lossless, solve_lossy, track_modes)
from .material import MaterialModel, assemble_material_matrix
from .mesh import Mesh, MeshError, build_rwg, circumscribing_radius

log = logging.getLogger(__name__)

BINARY_TOL = 1e-9


class NoCrossingError(ValueError):
    pass


def is_binary(rho, tol: float = BINARY_TOL) -> bool:
    rho = np.asarray(rho, float)
    return bool(np.all((np.abs(rho) <= tol) | (np.abs(rho - 1) <= tol)))


def threshold(rho, level: float = 0.5, mesh: Mesh | None = None) -> np.ndarray:
    """``1`` where ``rho >= level``; fixed/passive triangles forced to 1/0."""
    if not 0 < level < 1:
        raise ValueError("threshold level must lie in (0, 1)")
    out = (np.asarray(rho, float) >= level).astype(float)
    if mesh is not None:
        out[mesh.region_mask("fixed")] = 1.0
        out[mesh.region_mask("passive")] = 0.0
    return out


def submesh(mesh: Mesh, mask) -> tuple[Mesh, np.ndarray]:
    """Triangles selected by ``mask`` with unused nodes dropped."""
    tri_idx = np.flatnonzero(mask)
    if len(tri_idx) == 0:
        raise MeshError("design contains no metal")
    tris = mesh.triangles[tri_idx]
    used, inv = np.unique(tris, return_inverse=True)
    region = [mesh.region[t] for t in tri_idx]
    return Mesh(mesh.nodes[used], inv.reshape(tris.shape), region), tri_idx


def triangle_adjacency(mesh: Mesh, mask=None) -> sp.csr_matrix:
    """Edge-sharing adjacency restricted to ``mask``."""
    T = mesh.T
    keep = np.ones(T, bool) if mask is None else np.asarray(mask, bool)
    edges = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                    mesh.triangles[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(T), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    e, o = edges[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    a, b = o[:-1][same], o[1:][same]
    ok = keep[a] & keep[b]
    a, b = a[ok], b[ok]
    A = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(T, T))
    return (A + A.T).tocsr()


def connected_components(mesh: Mesh, rho, level: float = 0.5) -> tuple[int, np.ndarray]:
    """Edge-connected metal components; non-metal triangles get label -1."""
    metal = np.asarray(rho, float) >= level
    n, labels = _cc(triangle_adjacency(mesh, metal), directed=False)
    labels = np.where(metal, labels, -1)
    uniq = np.unique(labels[metal])
    remap = {old: new for new, old in enumerate(uniq)}
    return len(uniq), np.array([remap.get(v, -1) for v in labels])


# --- raster smoothing ------------------------------------------------------

def _locate(mesh: Mesh, pts) -> np.ndarray:
    """Triangle containing each 2-D point (-1 outside)."""
    tree = cKDTree(mesh.centroids[:, :2])
    k = min(8, mesh.T)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    P = mesh.nodes[mesh.triangles][:, :, :2]
    out = np.full(len(pts), -1)
    for j in range(k):
        t = cand[:, j]
        todo = out < 0
        v0, v1, v2 = P[t, 0], P[t, 1], P[t, 2]
        d = (v1[:, 1] - v2[:, 1]) * (v0[:, 0] - v2[:, 0]) + (v2[:, 0] - v1[:, 0]) * (v0[:, 1] - v2[:, 1])
        l1 = ((v1[:, 1] - v2[:, 1]) * (pts[:, 0] - v2[:, 0]) + (v2[:, 0] - v1[:, 0]) * (pts[:, 1] - v2[:, 1])) / d
        l2 = ((v2[:, 1] - v0[:, 1]) * (pts[:, 0] - v2[:, 0]) + (v0[:, 0] - v2[:, 0]) * (pts[:, 1] - v2[:, 1])) / d
        inside = (l1 >= -1e-12) & (l2 >= -1e-12) & (1 - l1 - l2 >= -1e-12)
        out[todo & inside] = t[todo & inside]
    return out


def gaussian_smooth(rho, mesh: Mesh, sigma: float, raster_res: float | None = None,
                    rmin: float | None = None, level: float = 0.5) -> np.ndarray:
    """Rasterise, blur with a Gaussian of width ``sigma`` (m), sample back and
    re-threshold.  The blur is normalised by the blurred domain mask so the
    outer boundary is not eroded."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if raster_res is None:
        if rmin is None:
            raise ValueError("give raster_res or rmin")
        raster_res = rmin / 4
    if raster_res <= 0:
        raise ValueError("raster_res must be positive")
    if rmin is not None and raster_res > rmin / 2:
        raise ValueError(f"raster resolution {raster_res:g} m gives fewer than 2 pixels per "
                         f"filter radius {rmin:g} m")
    rho = np.asarray(rho, float)
    lo, hi = mesh.nodes[:, :2].min(0), mesh.nodes[:, :2].max(0)
    nx = max(1, int(np.ceil((hi[0] - lo[0]) / raster_res)))
    ny = max(1, int(np.ceil((hi[1] - lo[1]) / raster_res)))
    xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
    ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    owner = _locate(mesh, pts)
    inside = owner >= 0
    img = np.zeros(len(pts))
    img[inside] = rho[owner[inside]]
    img, dom = img.reshape(nx, ny), inside.reshape(nx, ny).astype(float)
    if sigma > 0:
        s = sigma / raster_res
        num = ndimage.gaussian_filter(img, s, mode="constant")
        den = ndimage.gaussian_filter(dom, s, mode="constant")
        img = np.where(dom > 0, num / np.maximum(den, 1e-12), 0.0)
    flat = img.ravel()
    acc = np.bincount(owner[inside], weights=flat[inside], minlength=mesh.T)
    cnt = np.bincount(owner[inside], minlength=mesh.T)
    out = np.empty(mesh.T)
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit]
    if np.any(~hit):
        # triangles smaller than a pixel: sample at the centroid
        c = mesh.centroids[~hit, :2]
        fx = (c[:, 0] - lo[0]) / (hi[0] - lo[0]) * nx - 0.5
        fy = (c[:, 1] - lo[1]) / (hi[1] - lo[1]) * ny - 0.5
        out[~hit] = ndimage.map_coordinates(img, [fx, fy], order=1, mode="nearest")
    return threshold(out, level, mesh)


# --- frequency sweeps ------------------------------------------------------

@dataclass
class SweepResult:
    ka: np.ndarray
    lam: np.ndarray  # (n_ka, n_modes)
    delta: np.ndarray
    q: np.ndarray
    design_id: str = ""
    failures: list = field(default_factory=list)

    @property
    def alpha(self) -> np.ndarray:
        return characteristic_angle(self.lam)

    @property
    def significance(self) -> np.ndarray:
        return modal_significance(self.lam)

    @property
    def n_modes(self) -> int:
        return self.lam.shape[1]

    def to_csv(self, path) -> None:
        n = self.n_modes
        head = ["ka"]
        for name in ("lambda", "delta", "alpha", "t", "Q"):
            head += [f"{name}_{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for i, ka in enumerate(self.ka):
                row = [ka, *self.lam[i], *self.delta[i], *self.alpha[i], *self.significance[i],
                       *self.q[i]]
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> SweepResult:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, data = rows[0], np.array(rows[1:], float)
        n = sum(h.startswith("lambda_") for h in head)
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], data[:, 1 + 4 * n:1 + 5 * n])


def parse_range(text: str) -> np.ndarray:
    """``start:stop:count`` -> ``linspace``."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise ValueError(f"expected start:stop:count, got {text!r}") from exc
    if n < 2 or not b > a:
        raise ValueError(f"bad range {text!r}")
    return np.linspace(a, b, n)


def frequency_sweep(mesh: Mesh, rho, ka_values, n_modes: int = 3, a: float | None = None,
                    model: MaterialModel = MaterialModel(), with_q: bool = True,
                    extra_modes: int = 2, order: int = 3, backend: str = "auto",
                    design_id: str = "") -> SweepResult:
    """Track the first ``n_modes`` characteristic modes over ``ka_values``.

    Binary designs are analysed losslessly on their metal triangles only; gray
    designs use the loss-augmented pencil on the whole mesh.  ``a`` defaults to
    the circumscribing radius of the whole mesh so that ``ka`` refers to the
    design domain.
    """
    ka_values = np.asarray(ka_values, float)
    if np.any(np.diff(ka_values) <= 0):
        raise ValueError("ka grid must be strictly increasing")
    rho = np.asarray(rho, float)
    a = circumscribing_radius(mesh) if a is None else a
    binary = is_binary(rho)
    work = submesh(mesh, rho > 0.5)[0] if binary else mesh
    basis = build_rwg(work)
    elements = None if binary else assemble_material_elements(work, basis)
    nsolve = min(basis.N - 1, n_modes + extra_modes)
    out = np.full((3, len(ka_values), n_modes), np.nan)
    prev: ModeSet | None = None
    failures = []
    for i, ka in enumerate(ka_values):
        try:
            ops = assemble_impedance(work, basis, ka / a, order=order,
                                     stored_energy="fd" if with_q else None)
            if binary:
                ms = solve_lossless(ops, nsolve, backend=backend)
            else:
                Rrho = assemble_material_matrix(rho, elements, model)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegeneracyWarning)
                    ms = solve_lossy(ops, Rrho, nsolve, backend=backend)
        except (EigenSolverError, np.linalg.LinAlgError) as exc:
            failures.append((float(ka), str(exc)))
            log.warning("sweep sample ka=%g failed: %s", ka, exc)
            continue
        if prev is None:
            cur = ModeSet(list(ms.modes[:n_modes]))
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                cur = ms.reorder(track_modes(prev, ms, ops.R0))
        prev = cur
        out[0, i] = cur.lam
        out[1, i] = cur.delta if not binary else 0.0
        if with_q:
            out[2, i] = [modal_q(m.current, ops.X0p, ops.R0) for m in cur]
    return SweepResult(ka_values, out[0], out[1], out[2], design_id, failures)


def find_resonances(ka, lam) -> list[float]:
    """All zero crossings of ``lam(ka)`` by linear interpolation."""
    ka, lam = np.asarray(ka, float), np.asarray(lam, float)
    ok = np.isfinite(lam)
    ka, lam = ka[ok], lam[ok]
    out = []
    for i in range(len(ka) - 1):
        l0, l1 = lam[i], lam[i + 1]
        if l0 == 0.0:
            out.append(float(ka[i]))
        elif l0 * l1 < 0:
            out.append(float(ka[i] - l0 * (ka[i + 1] - ka[i]) / (l1 - l0)))
    if len(lam) and lam[-1] == 0.0:
        out.append(float(ka[-1]))
    return out


def find_resonance(sweep: SweepResult | tuple, mode: int = 0) -> float:
    """First ``lam_n = 0`` (``alpha_n = pi``) crossing."""
    if isinstance(sweep, SweepResult):
        ka, lam = sweep.ka, sweep.lam[:, mode]
    else:
        ka, lam = sweep
    roots = find_resonances(ka, lam)
    if not roots:
        raise NoCrossingError(f"mode {mode + 1} has no resonance in ka [{ka[0]:g}, {ka[-1]:g}]")
    return roots[0]


def q_from_slope(ka, lam, at: float) -> float:
    """``(omega/2) dlam/domega`` from a sweep, central difference at ``at``."""
    ka, lam = np.asarray(ka, float), np.asarray(lam, float)
    i = int(np.clip(np.searchsorted(ka, at), 1, len(ka) - 1))
    slope = (lam[i] - lam[i - 1]) / (ka[i] - ka[i - 1])
    return 0.5 * at * slope


# --- material model study --------------------------------------------------

@dataclass
class MaterialStudy:
    ka: np.ndarray
    rho: np.ndarray
    lam: np.ndarray  # (n_ka, n_rho)
    delta: np.ndarray
    z_air: np.ndarray
    ka_ref: float
    lam_z: np.ndarray  # (n_zair, n_rho) at ka_ref
    delta_z: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z_air", "ka", "rho", "lambda_1", "delta_1"])
            for i, ka in enumerate(self.ka):
                for j, r in enumerate(self.rho):
                    w.writerow([repr(float(self.z_air[0])), repr(float(ka)), repr(float(r)),
                                repr(float(self.lam[i, j])), repr(float(self.delta[i, j]))])
            for z, zval in enumerate(self.z_air):
                for j, r in enumerate(self.rho):
                    w.writerow([repr(float(zval)), repr(float(self.ka_ref)), repr(float(r)),
                                repr(float(self.lam_z[z, j])), repr(float(self.delta_z[z, j]))])


def first_mode(ops, Rrho, backend="auto"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        return solve_lossy(ops, Rrho, 1, backend=backend)[0]


def material_model_study(mesh: Mesh, ka_values, rho_values, z_air_values=(1e5,),
                         ka_ref: float = 0.7, z_met: float = 0.01, a: float | None = None,
                         order: int = 3, backend: str = "auto") -> MaterialStudy:
    """First characteristic number of the fixture over ``(ka, rho)`` and over
    ``rho`` for each vacuum resistivity at ``ka_ref``."""
    from .fixtures import fixture_density

    a = circumscribing_radius(mesh) if a is None else a
    basis = build_rwg(mesh)
    el = assemble_material_elements(mesh, basis)
    ka_values, rho_values = np.asarray(ka_values, float), np.asarray(rho_values, float)
    base = MaterialModel(float(z_air_values[0]), z_met)
    lam = np.empty((len(ka_values), len(rho_values)))
    delta = np.empty_like(lam)
    for i, ka in enumerate(ka_values):
        ops = assemble_impedance(mesh, basis, ka / a, order=order)
        for j, r in enumerate(rho_values):
            md = first_mode(ops, assemble_material_matrix(fixture_density(mesh, r), el, base), backend)
            lam[i, j], delta[i, j] = md.lam, md.delta
    ops = assemble_impedance(mesh, basis, ka_ref / a, order=order)
    lam_z = np.empty((len(z_air_values), len(rho_values)))
    delta_z = np.empty_like(lam_z)
    for z, zair in enumerate(z_air_values):
        model = MaterialModel(float(zair), z_met)
        for j, r in enumerate(rho_values):
            md = first_mode(ops, assemble_material_matrix(fixture_density(mesh, r), el, model), backend)
            lam_z[z, j], delta_z[z, j] = md.lam, md.delta
    return MaterialStudy(ka_values, rho_values, lam, delta, np.asarray(z_air_values, float),
                         ka_ref, lam_z, delta_z)


# --- design files ----------------------------------------------------------

def write_design_csv(path, rho) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle_id", "rho"])
        for t, r in enumerate(np.asarray(rho, float)):
            w.writerow([t, repr(float(r))])


def read_design_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["triangle_id", "rho"]:
        raise ValueError(f"{path}: not a design file")
    ids = np.array([int(r[0]) for r in rows[1:]])
    rho = np.array([float(r[1]) for r in rows[1:]])
    if not np.array_equal(ids, np.arange(len(ids))):
        raise ValueError(f"{path}: triangle ids must be 0..T-1 in order")
    return rho


def write_vtk(path, mesh: Mesh, rho, name: str = "rho") -> None:
    """Legacy ASCII VTK polydata with per-triangle cell data."""
    rho = np.asarray(rho, float)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ndensity\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(mesh.nodes)} double\n")
        for p in mesh.nodes.tolist():
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        fh.write(f"POLYGONS {mesh.T} {4 * mesh.T}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"CELL_DATA {mesh.T}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for r in rho.tolist():
            fh.write(f"{r!r}\n")


def read_vtk(path) -> tuple[Mesh, np.ndarray]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    i = next(k for k, ln in enumerate(lines) if ln.startswith("POINTS"))
    P = int(lines[i].split()[1])
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + P]])
    i = next(k for k, ln in enumerate(lines) if ln.startswith("POLYGONS"))
    T = int(lines[i].split()[1])
    tris = np.array([[int(v) for v in ln.split()[1:]] for ln in lines[i + 1:i + 1 + T]])
    i = next(k for k, ln in enumerate(lines) if ln.startswith("LOOKUP_TABLE"))
    rho = np.array([float(v) for v in lines[i + 1:i + 1 + T]])
    return Mesh(nodes, tris, ["design"] * T), rho
