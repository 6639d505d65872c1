"""Density filter, tanh projection with beta continuation, and the chain rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import Mesh, RegionSpec


@dataclass(frozen=True)
class FilterConfig:
    rmin: float
    eta: float = 0.5
    beta0: float = 1.0
    beta_mult: float = 2.0
    beta_period: int = 75
    beta_max: float = 64.0

    def __post_init__(self):
        if not self.rmin > 0:
            raise ValueError("rmin must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.beta0 < 1 or self.beta_max < self.beta0:
            raise ValueError("need 1 <= beta0 <= beta_max")
        if self.beta_period < 1 or self.beta_mult < 1:
            raise ValueError("beta_period and beta_mult must be >= 1")


def filter_matrix(mesh: Mesh, rmin: float) -> sp.csr_matrix:
    """Row-normalised weights ``w_ts A_s / sum_s w_ts A_s`` with the linear
    hat ``w_ts = max(0, rmin - |c_t - c_s|)``."""
    if not rmin > 0:
        raise ValueError("rmin must be positive")
    tree = cKDTree(mesh.centroids)
    D = tree.sparse_distance_matrix(tree, rmin, output_type="coo_matrix")
    # zero distances (the diagonal) are dropped by scipy, so add them back
    off = (D.row != D.col) & (D.data < rmin)
    diag = np.arange(mesh.T)
    rows = np.concatenate([D.row[off], diag])
    cols = np.concatenate([D.col[off], diag])
    dist = np.concatenate([D.data[off], np.zeros(mesh.T)])
    w = (rmin - dist) * mesh.areas[cols]
    W = sp.csr_matrix((w, (rows, cols)), shape=(mesh.T, mesh.T))
    W.sum_duplicates()
    norm = np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(1.0 / norm) @ W


def density_filter(rho, mesh_or_W, rmin: float | None = None) -> np.ndarray:
    W = mesh_or_W if sp.issparse(mesh_or_W) else filter_matrix(mesh_or_W, rmin)
    return W @ np.asarray(rho, float)


def _tanh_terms(beta, eta):
    return np.tanh(beta * eta), np.tanh(beta * (1.0 - eta))


def projection(rho_f, beta: float, eta: float = 0.5) -> np.ndarray:
    a, b = _tanh_terms(beta, eta)
    out = (a + np.tanh(beta * (np.asarray(rho_f, float) - eta))) / (a + b)
    return np.clip(out, 0.0, 1.0)


def projection_derivative(rho_f, beta: float, eta: float = 0.5) -> np.ndarray:
    a, b = _tanh_terms(beta, eta)
    return beta * (1.0 - np.tanh(beta * (np.asarray(rho_f, float) - eta)) ** 2) / (a + b)


def beta_schedule(iteration: int, config: FilterConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    steps = iteration // config.beta_period
    # avoid overflow for absurd iteration counts
    if steps > 64:
        return float(config.beta_max)
    return float(min(config.beta_max, config.beta0 * config.beta_mult**steps))


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DensityField:
    """The three stages raw -> filtered -> projected on all triangles."""

    raw: np.ndarray
    filtered: np.ndarray
    projected: np.ndarray
    beta: float
    eta: float
    design: np.ndarray  # boolean mask

    @property
    def key(self) -> int:
        return hash((self.raw.tobytes(), self.beta, self.eta))


class DensityPipeline:
    """Maps design-variable vectors to physical densities and back-propagates
    gradients.  Fixed/passive triangles enter the filter with their constant
    values and are clamped after projection."""

    def __init__(self, mesh: Mesh, rmin: float, eta: float = 0.5, regions: RegionSpec | None = None):
        self.mesh = mesh
        self.regions = regions or RegionSpec.from_mesh(mesh)
        self.design = np.zeros(mesh.T, dtype=bool)
        self.design[self.regions.design] = True
        self.template = self.regions.fixed_values(mesh.T)
        self.W = filter_matrix(mesh, rmin)
        self.Wd = self.W[:, np.flatnonzero(self.design)].tocsr()
        self.eta = eta

    @property
    def n_design(self) -> int:
        return int(self.design.sum())

    def full(self, x) -> np.ndarray:
        rho = self.template.copy()
        rho[self.design] = x
        return rho

    def forward(self, x, beta: float) -> DensityField:
        x = np.asarray(x, float)
        if x.shape != (self.n_design,):
            raise ValueError(f"expected {self.n_design} design variables, got {x.shape}")
        raw = self.full(x)
        filt = np.clip(self.W @ raw, 0.0, 1.0)
        proj = projection(filt, beta, self.eta)
        proj[self.regions.fixed] = 1.0
        proj[self.regions.passive] = 0.0
        return DensityField(raw, filt, proj, float(beta), self.eta, self.design)

    def chain_rule(self, dF_dproj, field: DensityField, x=None) -> np.ndarray:
        """``dF/dx = W_d^T (H'(rho_f) * dF/drho~)``, fixed/passive entries masked."""
        if x is not None and not np.array_equal(field.raw[self.design], np.asarray(x, float)):
            raise StaleCacheError("density field does not match the design vector")
        g = np.asarray(dF_dproj, float) * projection_derivative(field.filtered, field.beta, field.eta)
        g = np.where(self.design, g, 0.0)
        return self.Wd.T @ g


def chain_rule(dF_dproj, field: DensityField, W: sp.spmatrix) -> np.ndarray:
    """Functional form of :meth:`DensityPipeline.chain_rule` over design triangles."""
    g = np.asarray(dF_dproj, float) * projection_derivative(field.filtered, field.beta, field.eta)
    g = np.where(field.design, g, 0.0)
    return W[:, np.flatnonzero(field.design)].T @ g
