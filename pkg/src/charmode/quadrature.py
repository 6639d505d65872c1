"""Triangle quadrature rules and closed-form 1/R potential integrals."""

from __future__ import annotations

import numpy as np

# Symmetric rules on the reference triangle: barycentric points, weights summing to 1.
_a, _b = 0.797426985353087, 0.101286507323456
_c, _d = 0.059715871789770, 0.470142064105115
_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    3: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    7: (np.array([[1 / 3, 1 / 3, 1 / 3],
                  [_a, _b, _b], [_b, _a, _b], [_b, _b, _a],
                  [_c, _d, _d], [_d, _c, _d], [_d, _d, _c]]),
        np.array([0.225] + [0.125939180544827] * 3 + [0.132394152788506] * 3)),
}


def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bary, weights)`` for a 1-, 3- or 7-point rule."""
    if order in _RULES:
        return _RULES[order]
    return subdivided_rule(order)


def subdivided_rule(level: int, base: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule: split the triangle into ``level**2`` copies of ``base``."""
    bary0, w0 = _RULES[base]
    pts, wts = [], []
    h = 1.0 / level
    for i in range(level):
        for j in range(level - i):
            # upright sub-triangle
            corners = np.array([[i, j], [i + 1, j], [i, j + 1]], float) * h
            pts.append(bary0 @ np.column_stack([1 - corners.sum(1), corners]))
            wts.append(w0 * h * h)
            if i + j < level - 1:
                corners = np.array([[i + 1, j], [i + 1, j + 1], [i, j + 1]], float) * h
                pts.append(bary0 @ np.column_stack([1 - corners.sum(1), corners]))
                wts.append(w0 * h * h)
    return np.vstack(pts), np.concatenate(wts)


def gauss_points(vertices: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Map barycentric points onto triangles; ``vertices`` has shape (T, 3, 3)."""
    return np.einsum("qa,tac->tqc", bary, vertices)


def _safe_log_ratio(lp, lm, Rp, Rm, R0sq):
    # ln((R+ + l+) / (R- + l-)), evaluated without cancellation for l < 0
    def g(l, R):
        out = np.empty_like(l)
        pos = l >= 0
        out[pos] = R[pos] + l[pos]
        neg = ~pos
        out[neg] = R0sq[neg] / np.maximum(R[neg] - l[neg], 1e-300)
        return out

    num, den = g(lp, Rp), g(lm, Rm)
    ok = (num > 0) & (den > 0)
    out = np.zeros_like(lp)
    out[ok] = np.log(num[ok] / den[ok])
    return out


def potential_integrals(r: np.ndarray, verts: np.ndarray):
    """Integrals of ``1/R`` and ``(r' - r)/R`` over flat triangles.

    Parameters
    ----------
    r : (M, 3) observation points
    verts : (M, 3, 3) source triangle vertices paired with each point

    Returns
    -------
    I1 : (M,) array, integral of 1/|r - r'| dS'
    Iv : (M, 3) array, integral of (r' - r_proj)/|r - r'| dS' where r_proj is
        the projection of r onto the source plane
    proj : (M, 3) the projected observation points
    """
    p0, p1, p2 = verts[:, 0], verts[:, 1], verts[:, 2]
    n = np.cross(p1 - p0, p2 - p0)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = np.einsum("ij,ij->i", r - p0, n)
    rho = r - d[:, None] * n
    ad = np.abs(d)
    I1 = np.zeros(len(r))
    Iv = np.zeros((len(r), 3))
    for a, b in ((p0, p1), (p1, p2), (p2, p0)):
        e = b - a
        le = np.linalg.norm(e, axis=1, keepdims=True)
        lhat = e / le
        uhat = np.cross(lhat, n)
        lp = np.einsum("ij,ij->i", b - rho, lhat)
        lm = np.einsum("ij,ij->i", a - rho, lhat)
        t0 = np.einsum("ij,ij->i", a - rho, uhat)
        R0sq = t0**2 + d**2
        Rp = np.linalg.norm(b - r, axis=1)
        Rm = np.linalg.norm(a - r, axis=1)
        logr = _safe_log_ratio(lp, lm, Rp, Rm, R0sq)
        with np.errstate(divide="ignore", invalid="ignore"):
            atn = (np.arctan2(t0 * lp, R0sq + ad * Rp) - np.arctan2(t0 * lm, R0sq + ad * Rm))
        I1 += t0 * logr - ad * atn
        Iv += uhat * (0.5 * (R0sq * logr + lp * Rp - lm * Rm))[:, None]
    return I1, Iv, rho
