"""Characteristic modes of the lossless and loss-augmented EFIE pencils.

Lossless modes solve ``X0 I = lam R0 I``; with a material matrix the pencil
becomes ``(X0 - j R_rho) I = xi R0 I`` with ``xi = lam - j delta``.  Both are
solved in shift-inverted form, ``(X0 - j R_rho)^-1 R0 I = (1/xi) I``, so the
modes of smallest ``|xi|`` are the dominant ones and the (near-)null space of
``R0`` maps to ``1/xi ~ 0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from .assembly import OperatorSet

log = logging.getLogger(__name__)

DENSE_MAX_N = 300
RANK_TOL = 1e-12
DEGEN_TOL = 1e-6


class EigenSolverError(RuntimeError):
    pass


class DegeneracyWarning(UserWarning):
    pass


class DegeneracyError(RuntimeError):
    """Raised when a tracked characteristic number is (near-)repeated."""


@dataclass(frozen=True, eq=False)
class CharacteristicMode:
    xi: complex
    current: np.ndarray
    pivot: int

    @property
    def lam(self) -> float:
        return float(self.xi.real)

    @property
    def delta(self) -> float:
        return float(-self.xi.imag)

    @property
    def alpha(self) -> float:
        return characteristic_angle(self.lam)

    @property
    def significance(self) -> float:
        return modal_significance(self.lam)


@dataclass(frozen=True, eq=False)
class ModeSet:
    modes: list = field(default_factory=list)

    def __len__(self):
        return len(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    def __iter__(self):
        return iter(self.modes)

    @property
    def xi(self) -> np.ndarray:
        return np.array([m.xi for m in self.modes], dtype=complex)

    @property
    def lam(self) -> np.ndarray:
        return self.xi.real

    @property
    def delta(self) -> np.ndarray:
        return -self.xi.imag

    @property
    def currents(self) -> np.ndarray:
        """Currents as columns, shape (N, n)."""
        return np.column_stack([m.current for m in self.modes])

    def reorder(self, perm) -> ModeSet:
        return ModeSet([self.modes[i] for i in perm])


def normalize_current(I, R0) -> tuple[np.ndarray, int]:
    """Scale to ``I^H R0 I = 1`` and rotate the largest entry onto the
    positive real axis."""
    I = np.asarray(I, dtype=complex)
    p = float(np.real(np.vdot(I, R0 @ I)))
    if not p > 0:
        raise EigenSolverError("current radiates no power (I^H R0 I <= 0)")
    I = I / np.sqrt(p)
    k = int(np.argmax(np.abs(I)))
    I = I * (np.conj(I[k]) / abs(I[k]))
    I[k] = abs(I[k])
    return I, k


def normalize_mode(mode: CharacteristicMode | np.ndarray, R0, xi=None) -> CharacteristicMode:
    if isinstance(mode, CharacteristicMode):
        xi, I = mode.xi, mode.current
    else:
        I = mode
    I, k = normalize_current(I, R0)
    return CharacteristicMode(complex(xi) if xi is not None else complex(np.nan), I, k)


def quotient_xi(I, ops: OperatorSet, Rrho=None) -> complex:
    """``(I^H X0 I - j I^H R_rho I) / I^H R0 I`` from a current."""
    den = np.real(np.vdot(I, ops.R0 @ I))
    lam = np.real(np.vdot(I, ops.X0 @ I)) / den
    delta = 0.0 if Rrho is None else np.real(np.vdot(I, Rrho @ I)) / den
    return complex(lam, -delta)


def _dense_eigs(A, R0):
    mu, V = sl.eig(R0, A)
    ok = np.isfinite(mu)
    return mu[ok], V[:, ok]


def _arnoldi_eigs(A, R0, n, ncv=None):
    lu = sl.lu_factor(A, check_finite=False)
    dtype = np.result_type(A.dtype, R0.dtype)
    op = LinearOperator(A.shape, matvec=lambda x: sl.lu_solve(lu, R0 @ x, check_finite=False),
                        dtype=dtype)
    v0 = np.ones(A.shape[0], dtype=dtype)  # fixed start vector keeps runs reproducible
    try:
        mu, V = eigs(op, k=n, which="LM", v0=v0, ncv=ncv or min(A.shape[0], max(2 * n + 1, 20)),
                     tol=0, maxiter=10 * A.shape[0])
    except ArpackNoConvergence as exc:
        raise EigenSolverError(f"Arnoldi did not converge: {exc}") from exc
    return mu, V


def _projected_eigs(A, R0, tol=RANK_TOL):
    """Fallback when ``A`` cannot be factorised: restrict to the significant
    eigenspace of ``R0``."""
    s, U = np.linalg.eigh(R0)
    keep = s > tol * s.max()
    U, s = U[:, keep], s[keep]
    W = U / np.sqrt(s)
    xi, Y = sl.eig(W.T @ A @ W)
    return 1.0 / xi, W @ Y


def _refine(A, R0, xi, I):
    """One inverse-iteration step at the converged shift."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sl.LinAlgWarning)
            y = sl.solve(A - xi * R0, R0 @ I, check_finite=False)
    except (sl.LinAlgError, ValueError):
        return xi, I
    if not np.all(np.isfinite(y)):
        return xi, I
    y = y / np.linalg.norm(y)
    # transpose Rayleigh quotient: stationary for complex-symmetric pencils
    den = y @ (R0 @ y)
    if den == 0:
        return xi, I
    return (y @ (A @ y)) / den, y


def _solve_pencil(A, ops: OperatorSet, n_modes: int, backend: str, refine: bool, Rrho):
    N = ops.N
    if n_modes < 1 or n_modes > N:
        raise ValueError(f"cannot compute {n_modes} modes of an N={N} system")
    if backend == "auto":
        backend = "dense" if N <= DENSE_MAX_N or n_modes >= N - 1 else "arnoldi"
    try:
        if backend == "dense":
            mu, V = _dense_eigs(A, ops.R0)
        elif backend == "arnoldi":
            # ARPACK cannot return N-1 or more eigenpairs
            mu, V = (_arnoldi_eigs(A, ops.R0, n_modes) if n_modes < N - 1
                     else _dense_eigs(A, ops.R0))
        elif backend == "projected":
            raise sl.LinAlgError("projection requested")
        else:
            raise ValueError(f"unknown eigen backend {backend!r}")
    except (sl.LinAlgError, ValueError) as exc:
        if isinstance(exc, ValueError) and "backend" in str(exc):
            raise
        log.warning("pencil factorisation failed (%s); using R0 projection", exc)
        mu, V = _projected_eigs(A, ops.R0)
    scale = np.abs(mu).max() if len(mu) else 0.0
    significant = np.abs(mu) > RANK_TOL * scale
    if significant.sum() < n_modes or scale == 0:
        raise EigenSolverError(f"requested {n_modes} modes but only {int(significant.sum())} "
                               "lie in the radiating subspace of R0")
    order = np.argsort(-np.abs(mu), kind="stable")[:n_modes]
    modes = []
    for i in order:
        xi, I = 1.0 / mu[i], V[:, i]
        if refine:
            xi, I = _refine(A, ops.R0, xi, I)
        I, k = normalize_current(I, ops.R0)
        if np.isrealobj(A):
            I = I.real.astype(complex)
            xi = complex(xi.real, 0.0)
        modes.append(CharacteristicMode(complex(xi), I, k))
    modes.sort(key=lambda m: abs(m.xi))
    return ModeSet(modes)


def solve_lossless(ops: OperatorSet, n_modes: int, backend: str = "auto",
                   refine: bool = True) -> ModeSet:
    """Modes of ``X0 I = lam R0 I`` ordered by ``|lam|``; currents are real."""
    return _solve_pencil(np.asarray(ops.X0, float), ops, n_modes, backend, refine, None)


def solve_lossy(ops: OperatorSet, Rrho, n_modes: int, backend: str = "auto",
                refine: bool = True, degen_tol: float = DEGEN_TOL) -> ModeSet:
    """Modes of ``(X0 - j R_rho) I = xi R0 I`` ordered by ``|xi|``.

    Currents are normalised to unit radiated power with the largest entry real
    and positive.  Warns with :class:`DegeneracyWarning` when two returned
    characteristic numbers nearly coincide.
    """
    if Rrho is None:
        return solve_lossless(ops, n_modes, backend, refine)
    A = ops.X0 - 1j * np.asarray(Rrho)
    modes = _solve_pencil(A, ops, n_modes, backend, refine, Rrho)
    pairs = degenerate_pairs(modes.xi, degen_tol)
    if pairs:
        warnings.warn(f"near-degenerate characteristic numbers at mode pairs {pairs}",
                      DegeneracyWarning, stacklevel=2)
    return modes


def degenerate_pairs(xi, rel_tol: float = DEGEN_TOL) -> list[tuple[int, int]]:
    xi = np.asarray(xi, complex)
    if len(xi) < 2:
        return []
    tol = rel_tol * np.abs(xi).max()
    return [(m, n) for m in range(len(xi)) for n in range(m + 1, len(xi))
            if abs(xi[m] - xi[n]) < tol]


def track_modes(prev: ModeSet, new: ModeSet, R0, ambiguity: float = 1e-3) -> list[int]:
    """Greedy assignment maximising ``|I_prev^H R0 I_new|``.

    Returns ``perm`` such that ``new.reorder(perm)[m]`` continues ``prev[m]``.
    ``new`` may hold more modes than ``prev``; the unmatched ones are dropped.
    On an ambiguous match the raw ``|xi|`` order is kept.
    """
    P, Nn = len(prev), len(new)
    if Nn < P:
        raise ValueError("new mode set is smaller than the tracked set")
    C = np.abs(prev.currents.conj().T @ (R0 @ new.currents))
    perm = [-1] * P
    work = C.copy()
    for _ in range(P):
        m, n = np.unravel_index(np.argmax(work), work.shape)
        row = np.delete(work[m], n)
        row = row[row >= 0]
        if row.size and work[m, n] - row.max() < ambiguity:
            warnings.warn(f"ambiguous mode tracking for mode {m}; keeping |xi| order",
                          DegeneracyWarning, stacklevel=2)
            return list(range(P))
        perm[m] = int(n)
        work[m, :] = -1.0
        work[:, n] = -1.0
    return perm


def characteristic_angle(lam):
    return np.pi - np.arctan(lam)


def modal_significance(lam, conventional: bool = False):
    """``1 / (1 + lam^2)``; ``conventional=True`` gives ``1 / sqrt(1 + lam^2)``."""
    lam = np.asarray(lam, float)
    t = 1.0 / (1.0 + lam**2)
    out = np.sqrt(t) if conventional else t
    return out if out.ndim else float(out)


def modal_q(I, X0p, R0) -> float:
    """``Q = I^H X0' I / (2 I^H R0 I)``."""
    den = float(np.real(np.vdot(I, R0 @ I)))
    if not den > 0:
        raise EigenSolverError("current radiates no power")
    return float(np.real(np.vdot(I, X0p @ I))) / (2.0 * den)


def tuned_q(I, X0p, R0, lam: float) -> float:
    """Q after tuning the mode to resonance with a lossless reactance.

    Adds the reactive mismatch ``|lam|/2`` to :func:`modal_q`; the two agree
    at resonance. Physical bounds on Q apply to this quantity at any ka.
    """
    return modal_q(I, X0p, R0) + 0.5 * abs(lam)
