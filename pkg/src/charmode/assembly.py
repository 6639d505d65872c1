"""Dense EFIE operators on RWG bases and per-triangle Gram blocks.

The free-space impedance matrix is split as ``Z = R0 + j X0`` with

    R0 = eta/(4 pi) [k <f, f'>_s - <div f, div f'>_s / k]
    X0 = eta/(4 pi) [k <f, f'>_c - <div f, div f'>_c / k]

where ``<., .>_s`` and ``<., .>_c`` are double surface integrals against
``sin(kR)/R`` and ``cos(kR)/R`` (time convention exp(+j omega t)).  Only the
cosine kernel is singular; its static ``1/R`` part is integrated analytically
over the source triangle for touching triangle pairs.
"""

from __future__ import annotations

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.constants import epsilon_0, mu_0

from .mesh import BasisSet, Mesh
from .quadrature import gauss_points, potential_integrals, triangle_rule

log = logging.getLogger(__name__)

ETA0 = float(np.sqrt(mu_0 / epsilon_0))


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Real symmetric EFIE matrices at wavenumber ``k``."""

    R0: np.ndarray
    X0: np.ndarray
    k: float
    X0p: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.R0.shape[0]

    def restrict(self, idx) -> OperatorSet:
        """Sub-operators on a subset of basis functions."""
        idx = np.asarray(idx)
        sub = np.ix_(idx, idx)
        return OperatorSet(self.R0[sub], self.X0[sub], self.k,
                           None if self.X0p is None else self.X0p[sub])


@dataclass(frozen=True, eq=False)
class MaterialElements:
    """Per-triangle RWG Gram blocks ``B[t, i, j] = int_t f_i . f_j dS``.

    ``index[t, i]`` is the global basis of local slot ``i`` (-1 if absent);
    blocks are zero in absent slots.
    """

    blocks: np.ndarray
    index: np.ndarray
    N: int

    def embedded(self, t: int) -> np.ndarray:
        out = np.zeros((self.N, self.N))
        idx = self.index[t]
        ok = idx >= 0
        out[np.ix_(idx[ok], idx[ok])] = self.blocks[t][np.ix_(ok, ok)]
        return out

    def gram(self, weights=None) -> np.ndarray:
        """``sum_t w_t B_t`` embedded in the global frame."""
        w = np.ones(len(self.blocks)) if weights is None else np.asarray(weights, float)
        T = len(self.blocks)
        rows = np.repeat(self.index[:, :, None], 3, axis=2)
        cols = np.repeat(self.index[:, None, :], 3, axis=1)
        vals = self.blocks * w[:, None, None]
        ok = (rows >= 0) & (cols >= 0)
        out = np.zeros((self.N, self.N))
        np.add.at(out, (rows[ok], cols[ok]), vals[ok])
        assert T == len(w)
        return out


def _basis_geometry(mesh: Mesh, basis: BasisSet):
    """Scaling factor ``sign * l / (2 A)`` and free vertex per local slot."""
    idx = basis.local
    has = idx >= 0
    length = np.where(has, basis.length[np.maximum(idx, 0)], 0.0)
    coef = basis.sign * length / (2.0 * mesh.areas[:, None])
    verts = mesh.nodes[mesh.triangles]  # (T, 3, 3); slot i's free vertex is vertex i
    return idx, has, coef, verts


def _sampling_matrices(mesh: Mesh, basis: BasisSet, bary, w):
    """Sparse (N, T*Q) operators sampling weighted f (x, y, z) and div f."""
    idx, has, coef, verts = _basis_geometry(mesh, basis)
    T, Q = mesh.T, len(w)
    pts = gauss_points(verts, bary)  # (T, Q, 3)
    wt = mesh.areas[:, None] * w[None, :]  # (T, Q)
    cols = (np.arange(T)[:, None, None] * Q + np.arange(Q)[None, None, :])  # (T,1,Q)
    cols = np.broadcast_to(cols, (T, 3, Q))
    rows = np.broadcast_to(idx[:, :, None], (T, 3, Q))
    mask = np.broadcast_to(has[:, :, None], (T, 3, Q))
    # f(r_q) for slot i = coef * (r_q - v_i)
    vec = coef[:, :, None, None] * (pts[:, None, :, :] - verts[:, :, None, :])  # (T,3,Q,3)
    vec = vec * wt[:, None, :, None]
    div = np.broadcast_to((2.0 * coef)[:, :, None] * wt[:, None, :], (T, 3, Q))
    shape = (basis.N, T * Q)
    r, c = rows[mask], cols[mask]
    F = [sp.csr_matrix((vec[..., d][mask], (r, c)), shape=shape) for d in range(3)]
    D = sp.csr_matrix((div[mask], (r, c)), shape=shape)
    return F, D, pts.reshape(-1, 3)


def near_pairs(mesh: Mesh, near_factor: float = 0.0) -> np.ndarray:
    """Triangle pairs (t, s) sharing a vertex, plus pairs whose centroids are
    closer than ``near_factor`` times the larger of their longest edges."""
    T = mesh.T
    inc = sp.csr_matrix((np.ones(3 * T), (np.repeat(np.arange(T), 3), mesh.triangles.ravel())),
                        shape=(T, len(mesh.nodes)))
    touch = (inc @ inc.T).tocoo()
    pairs = set(zip(touch.row.tolist(), touch.col.tolist()))
    if near_factor > 0:
        from scipy.spatial import cKDTree

        p = mesh.nodes[mesh.triangles]
        hmax = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2).max(axis=1)
        tree = cKDTree(mesh.centroids)
        for t, nbrs in enumerate(tree.query_ball_point(mesh.centroids, near_factor * hmax.max())):
            for s in nbrs:
                if np.linalg.norm(mesh.centroids[t] - mesh.centroids[s]) < near_factor * max(hmax[t], hmax[s]):
                    pairs.add((t, s))
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def _static_correction(mesh, basis, bary, w, pairs):
    """Analytic 1/R contribution for near pairs, as (N, N) ff and dd matrices."""
    idx, has, coef, verts = _basis_geometry(mesh, basis)
    N = basis.N
    ff = np.zeros((N, N))
    dd = np.zeros((N, N))
    Q = len(w)
    pts = gauss_points(verts, bary)
    for chunk in np.array_split(pairs, max(1, len(pairs) // 20000 + 1)):
        t, s = chunk[:, 0], chunk[:, 1]
        P = len(chunk)
        r = pts[t].reshape(-1, 3)
        src = np.repeat(verts[s], Q, axis=0)
        I1, Iv, proj = potential_integrals(r, src)
        I1 = I1.reshape(P, Q)
        Iv = Iv.reshape(P, Q, 3)
        proj = proj.reshape(P, Q, 3)
        wt = mesh.areas[t][:, None] * w[None, :]  # (P, Q)
        # test side: coef_ti * (r_q - v_ti); source side: coef_sj * (Iv + (proj - v_sj) I1)
        test = coef[t][:, :, None, None] * (pts[t][:, None] - verts[t][:, :, None])  # (P,3,Q,3)
        srcv = coef[s][:, :, None, None] * (Iv[:, None] + (proj[:, None] - verts[s][:, :, None]) * I1[:, None, :, None])
        loc_ff = np.einsum("pq,piqc,pjqc->pij", wt, test, srcv)
        loc_dd = np.einsum("pq,pq->p", wt, I1)[:, None, None] * (2 * coef[t])[:, :, None] * (2 * coef[s])[:, None, :]
        rows = np.broadcast_to(idx[t][:, :, None], (P, 3, 3))
        cols = np.broadcast_to(idx[s][:, None, :], (P, 3, 3))
        ok = (rows >= 0) & (cols >= 0)
        np.add.at(ff, (rows[ok], cols[ok]), loc_ff[ok])
        np.add.at(dd, (rows[ok], cols[ok]), loc_dd[ok])
    return ff, dd


def _kernel(name, k, R, invR, nmask):
    kR = k * R
    if name == "cos":
        # near pairs: drop the static 1/R, which is added analytically
        return np.where(nmask, -2.0 * np.sin(0.5 * kR) ** 2, np.cos(kR)) * invR
    if name == "sinc":
        return np.where(R > 0, np.sin(kR) * invR, k)
    if name == "sin":
        return np.sin(kR)
    raise ValueError(name)


def _kernel_products(mesh, basis, k, order, kernels, near, threads, chunk):
    """Double integrals ``(ff, dd)`` for each named kernel with one rule."""
    bary, w = triangle_rule(order)
    Q = len(w)
    T = mesh.T
    F, D, pts = _sampling_matrices(mesh, basis, bary, w)
    FT = [f.T.tocsr() for f in F]
    DT = D.T.tocsr()
    blocks = [np.arange(i, min(i + chunk, T)) for i in range(0, T, chunk)]

    def work(tb):
        rows = slice(tb[0] * Q, (tb[-1] + 1) * Q)
        diff = pts[rows, None, :] - pts[None, :, :]
        R = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        del diff
        with np.errstate(divide="ignore", invalid="ignore"):
            invR = np.where(R > 0, 1.0 / R, 0.0)
        nmask = None
        if "cos" in kernels:
            nb = near[tb].toarray()
            nmask = np.repeat(np.repeat(nb, Q, axis=0), Q, axis=1)
        out = []
        for name in kernels:
            K = _kernel(name, k, R, invR, nmask)
            # (N, B*Q) = F @ K^T, then contracted with the block's own columns
            ff = sum((Fd @ K.T) @ FTd[rows] for Fd, FTd in zip(F, FT))
            dd = (D @ K.T) @ DT[rows]
            out.append((np.asarray(ff), np.asarray(dd)))
        return out

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    # fixed summation order over blocks keeps results reproducible
    acc = []
    for j in range(len(kernels)):
        ff = np.zeros((basis.N, basis.N))
        dd = np.zeros_like(ff)
        for p in parts:
            ff += p[j][0]
            dd += p[j][1]
        acc.append((ff, dd))
    return acc


def _sym(A):
    return 0.5 * (A + A.T)


def assemble_impedance(mesh: Mesh, basis: BasisSet, k: float, order: int = 3,
                       r0_order: int = 7, near_factor: float = 0.0,
                       stored_energy: str | None = None, fd_step: float = 1e-3,
                       threads: int = 1, chunk: int = 64) -> OperatorSet:
    """Galerkin EFIE matrices ``R0``, ``X0`` (ohms) for a PEC surface.

    ``order`` is the rule for the singular cosine kernel; the smooth ``R0``
    kernel uses ``r0_order``.  ``stored_energy`` selects how
    ``X0p = k dX0/dk`` is formed: ``None`` skips it, ``"fd"`` uses a central
    difference with relative step ``fd_step``, ``"analytic"`` differentiates
    the kernel.
    """
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    if basis.N == 0:
        raise ValueError("mesh has no interior edges")
    if stored_energy not in (None, "fd", "analytic"):
        raise ValueError(f"unknown stored-energy backend {stored_energy!r}")
    deriv = stored_energy == "analytic"
    T = mesh.T
    pairs = near_pairs(mesh, near_factor)
    near = sp.csr_matrix((np.ones(len(pairs), dtype=bool), (pairs[:, 0], pairs[:, 1])), shape=(T, T))
    names = ["cos"] + (["sin"] if deriv else [])
    if r0_order == order:
        names.append("sinc")
    acc = dict(zip(names, _kernel_products(mesh, basis, k, order, names, near, threads, chunk)))
    if r0_order != order:
        acc["sinc"] = _kernel_products(mesh, basis, k, r0_order, ["sinc"], near, threads, chunk)[0]
    bary, w = triangle_rule(order)
    sff, sdd = _static_correction(mesh, basis, bary, w, pairs)
    cff, cdd = acc["cos"][0] + sff, acc["cos"][1] + sdd
    c = ETA0 / (4 * np.pi)
    sff_, sdd_ = acc["sinc"]
    R0 = _sym(c * (k * sff_ - sdd_ / k))
    X0 = _sym(c * (k * cff - cdd / k))
    X0p = None
    if deriv:
        ff2, dd2 = acc["sin"]
        X0p = _sym(c * (k * cff + cdd / k - k * k * ff2 + dd2))
    elif stored_energy == "fd":
        X0p = stored_energy_fd(mesh, basis, k, fd_step, order=order, r0_order=r0_order,
                               near_factor=near_factor, threads=threads, chunk=chunk)
    return OperatorSet(R0, X0, float(k), X0p)


def stored_energy_fd(mesh: Mesh, basis: BasisSet, k: float, h: float = 1e-3, **kw) -> np.ndarray:
    """``k dX0/dk`` by central difference with relative step ``h``."""
    if not (h > 1e-8):
        raise ValueError(f"finite-difference step {h} underflows")
    Xp = _reactance(mesh, basis, k * (1 + h), **kw)
    Xm = _reactance(mesh, basis, k * (1 - h), **kw)
    return _sym((Xp - Xm) / (2 * h))


def _reactance(mesh, basis, k, order=3, r0_order=7, near_factor=0.0, threads=1, chunk=64):
    pairs = near_pairs(mesh, near_factor)
    T = mesh.T
    near = sp.csr_matrix((np.ones(len(pairs), dtype=bool), (pairs[:, 0], pairs[:, 1])), shape=(T, T))
    ff, dd = _kernel_products(mesh, basis, k, order, ["cos"], near, threads, chunk)[0]
    bary, w = triangle_rule(order)
    sff, sdd = _static_correction(mesh, basis, bary, w, pairs)
    return ETA0 / (4 * np.pi) * (k * (ff + sff) - (dd + sdd) / k)


def assemble_stored_energy(mesh: Mesh, basis: BasisSet, k: float, backend: str = "fd",
                           h: float = 1e-3, **kw) -> np.ndarray:
    """Stored-energy matrix ``X0' = omega dX0/domega`` at wavenumber ``k``."""
    if backend == "fd":
        return _sym(stored_energy_fd(mesh, basis, k, h, **kw))
    return assemble_impedance(mesh, basis, k, stored_energy=backend, **kw).X0p


def assemble_material_elements(mesh: Mesh, basis: BasisSet) -> MaterialElements:
    """Exact Gram blocks using ``int lam_a lam_b dS = A (1 + delta_ab) / 12``."""
    idx, has, coef, verts = _basis_geometry(mesh, basis)
    M = (np.ones((3, 3)) + np.eye(3)) / 12.0
    # (p_a - v_i) . (p_b - v_j) for all a, b, i, j
    diff = verts[:, None, :, :] - verts[:, :, None, :]  # (T, i, a, 3) = p_a - v_i
    G = np.einsum("tiac,tjbc,ab->tij", diff, diff, M) * mesh.areas[:, None, None]
    blocks = G * coef[:, :, None] * coef[:, None, :]
    blocks[~has] = 0.0
    blocks.transpose(0, 2, 1)[~has] = 0.0
    return MaterialElements(blocks, idx.copy(), basis.N)


# --- binary operator cache ---------------------------------------------------

_MAGIC = b"CMOP1\0\0\0"


def cache_path(cache_dir, mesh: Mesh, k: float, order: int) -> Path:
    return Path(cache_dir) / f"{mesh.digest()[:16]}_k{k:.12g}_o{order}.bin"


def save_operators(ops: OperatorSet, path, order: int) -> None:
    """Header ``{N, k, order, has_X0p}`` followed by row-major float64 payloads."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qdqq", ops.N, ops.k, order, int(ops.X0p is not None)))
        for M in (ops.R0, ops.X0) + ((ops.X0p,) if ops.X0p is not None else ()):
            fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_operators(path) -> tuple[OperatorSet, int]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not an operator cache file")
        N, k, order, has_p = struct.unpack("<qdqq", fh.read(32))
        mats = [np.frombuffer(fh.read(8 * N * N), dtype="<f8").reshape(N, N).copy()
                for _ in range(3 if has_p else 2)]
    return OperatorSet(mats[0], mats[1], k, mats[2] if has_p else None), order


def cached_operators(mesh: Mesh, basis: BasisSet, k: float, order: int = 3,
                     stored_energy: str | None = None, cache_dir=None, **kw) -> OperatorSet:
    """Assemble, reusing an on-disk copy under ``cache_dir`` (or
    ``$CHARMODE_CACHE_DIR``) when present."""
    cache_dir = cache_dir or os.environ.get("CHARMODE_CACHE_DIR")
    if cache_dir:
        path = cache_path(cache_dir, mesh, k, order)
        if path.exists():
            ops, _ = load_operators(path)
            if stored_energy is None or ops.X0p is not None:
                log.debug("operator cache hit %s", path)
                return ops
    ops = assemble_impedance(mesh, basis, k, order=order, stored_energy=stored_energy, **kw)
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_operators(ops, cache_path(cache_dir, mesh, k, order), order)
    return ops
