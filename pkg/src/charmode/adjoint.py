"""Objectives on characteristic modes and their adjoint material gradients.

A mode ``(xi, I)`` of ``(X0 - j R_rho) I = xi R0 I`` is pinned by unit
radiated power and a real pivot entry.  Writing ``I = I_Re + j I_Im`` and
``xi = lam - j delta`` gives a real system of ``2N + 2`` residuals whose
transposed Jacobian is the adjoint matrix solved in :func:`solve_adjoint_full`.
With multipliers ``w = [z_Re, z_Im, a, b]`` the gradient is

    df/drho_t = df/drho_t|explicit + z_Re^T dR_rho I_Im - z_Im^T dR_rho I_Re
              = ... + Im(z^H dR_rho I).

When ``f`` depends on ``xi`` only, the phase row drops out and a complex
``N + 1`` system suffices (:func:`solve_adjoint_reduced`).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
from scipy.linalg.lapack import get_lapack_funcs

from .assembly import MaterialElements, OperatorSet
from .cma import (CharacteristicMode, DegeneracyError, ModeSet, degenerate_pairs, solve_lossy)
from .material import MaterialModel, assemble_material_matrix, material_derivative_blocks

log = logging.getLogger(__name__)

KINDS = ("resonance", "modal_q", "minmax_bound", "area")

# Reduced system convention, fixed by agreement with the full real system:
# the border row uses the plain transpose, -I^T R0, the right-hand side is
# -(df/dlam + j df/ddelta), and the multiplier returned is the conjugate of
# the solved vector so that the gradient formula is shared with the full path.
REDUCED_CONVENTION = "transpose-border/dxi=dlam+j*ddelta/z=conj(y)"

NORM_TOL = 1e-8
RCOND_MIN = 1e-15


class UnnormalizedModeError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    """What to evaluate on a tracked mode.

    ``resonance``     f = lam^2 + nu delta^2
    ``modal_q``       f = Q + gamma (lam^2 + nu delta^2)
    ``minmax_bound``  h = lam^2 + nu delta^2 - z   (constraint, h <= 0)
    ``area``          h = S_f - sum_t rho_t A_t / A0 (constraint, h <= 0)
    """

    kind: str = "resonance"
    mode: int = 0
    nu: float = 0.1
    gamma: float = 1.0
    sf: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.nu < 0 or self.gamma < 0:
            raise ValueError("nu and gamma must be non-negative")
        if not 0.0 <= self.sf <= 1.0:
            raise ValueError("sf must lie in [0, 1]")
        if self.mode < 0:
            raise ValueError("mode index must be >= 0")

    @property
    def uses_current(self) -> bool:
        return self.kind == "modal_q"

    @property
    def uses_modes(self) -> bool:
        return self.kind != "area"


@dataclass(frozen=True, eq=False)
class ObjectiveValue:
    value: float
    d_lam: float = 0.0
    d_delta: float = 0.0
    d_IRe: np.ndarray | None = None
    d_IIm: np.ndarray | None = None
    d_rho: np.ndarray | None = None  # explicit term, per triangle

    @property
    def d_xi(self) -> complex:
        return complex(self.d_lam, self.d_delta)


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    z_re: np.ndarray
    z_im: np.ndarray
    a: float
    b: float
    pivot: int
    residual: float = 0.0

    @property
    def z(self) -> np.ndarray:
        return self.z_re + 1j * self.z_im


def _lsq_parts(lam, delta, nu):
    return lam * lam + nu * delta * delta, 2.0 * lam, 2.0 * nu * delta


def check_normalized(mode: CharacteristicMode, R0, tol: float = NORM_TOL) -> None:
    I = mode.current
    p = float(np.real(np.vdot(I, R0 @ I)))
    if abs(p - 1.0) > tol or abs(I[mode.pivot].imag) > tol * max(1.0, abs(I[mode.pivot])):
        raise UnnormalizedModeError(f"mode is not normalised (I^H R0 I = {p:.3e})")


def area_fraction(rho_phys, areas, design_mask) -> tuple[float, np.ndarray]:
    """``sum_t rho_t A_t / A0`` over design triangles and its gradient ``A_t / A0``."""
    areas = np.asarray(areas, float)
    w = np.where(design_mask, areas, 0.0) / areas[design_mask].sum()
    return float(w @ np.asarray(rho_phys, float)), w


def eval_objective(spec: ObjectiveSpec, mode: CharacteristicMode | None = None, rho_phys=None,
                   areas=None, design_mask=None, X0p=None, R0=None) -> ObjectiveValue:
    """Value and partial derivatives of one objective or constraint."""
    if spec.kind == "area":
        if rho_phys is None or areas is None:
            raise ValueError("area constraint needs densities and areas")
        mask = np.ones(len(areas), bool) if design_mask is None else np.asarray(design_mask, bool)
        frac, w = area_fraction(rho_phys, areas, mask)
        return ObjectiveValue(spec.sf - frac, d_rho=-w)
    if mode is None:
        raise ValueError(f"{spec.kind} needs a characteristic mode")
    if R0 is not None:
        check_normalized(mode, R0)
    f, fl, fd = _lsq_parts(mode.lam, mode.delta, spec.nu)
    if spec.kind == "resonance":
        return ObjectiveValue(f, fl, fd)
    if spec.kind == "minmax_bound":
        return ObjectiveValue(f - spec.z, fl, fd)
    # modal_q: Rayleigh quotient with the denominator kept explicit
    if X0p is None or R0 is None:
        raise ValueError("modal_q needs the stored-energy matrix and R0")
    IR, II = mode.current.real, mode.current.imag
    XR, XI = X0p @ IR, X0p @ II
    RR, RI = R0 @ IR, R0 @ II
    num = IR @ XR + II @ XI
    P = IR @ RR + II @ RI
    Q = num / (2.0 * P)
    g = spec.gamma
    return ObjectiveValue(Q + g * f, g * fl, g * fd,
                          (XR - 2.0 * Q * RR) / P, (XI - 2.0 * Q * RI) / P)


def adjoint_rhs(obj: ObjectiveValue, N: int) -> np.ndarray:
    """``F = -[df/dI_Re, df/dI_Im, df/dlam, -df/ddelta]``."""
    F = np.zeros(2 * N + 2)
    if obj.d_IRe is not None:
        F[:N] = -obj.d_IRe
    if obj.d_IIm is not None:
        F[N:2 * N] = -obj.d_IIm
    F[2 * N] = -obj.d_lam
    F[2 * N + 1] = obj.d_delta
    return F


def full_matrix(ops: OperatorSet, Rrho, mode: CharacteristicMode) -> np.ndarray:
    """The real ``(2N+2)`` adjoint matrix."""
    N = ops.N
    R0 = ops.R0
    Rrho = np.zeros_like(R0) if Rrho is None else np.asarray(Rrho, float)
    IR, II = mode.current.real, mode.current.imag
    lam, delta = mode.lam, mode.delta
    K = ops.X0 - lam * R0
    L = Rrho - delta * R0
    RIR, RII = R0 @ IR, R0 @ II
    A = np.zeros((2 * N + 2, 2 * N + 2))
    A[:N, :N] = K
    A[:N, N:2 * N] = -L
    A[:N, 2 * N] = 2.0 * RIR
    A[N:2 * N, :N] = L
    A[N:2 * N, N:2 * N] = K
    A[N:2 * N, 2 * N] = 2.0 * RII
    A[N + mode.pivot, 2 * N + 1] = 1.0
    A[2 * N, :N] = -RIR
    A[2 * N, N:2 * N] = -RII
    A[2 * N + 1, :N] = RII
    A[2 * N + 1, N:2 * N] = -RIR
    return A


def _factor(A):
    """LU with a reciprocal condition estimate; singular -> DegeneracyError."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sl.LinAlgWarning)
        lu, piv = sl.lu_factor(A, check_finite=False)
    gecon, = get_lapack_funcs(("gecon",), (lu,))
    anorm = np.abs(A).sum(axis=0).max()
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not rcond > RCOND_MIN:
        raise DegeneracyError(f"adjoint matrix is singular (rcond={rcond:.2e}); "
                              "the characteristic number is likely repeated")
    return lu, piv


def _solve(A, F):
    if not np.any(F):
        return np.zeros_like(F, dtype=np.result_type(A, F)), 0.0
    lu, piv = _factor(A)
    w = sl.lu_solve((lu, piv), F, check_finite=False)
    res = float(np.linalg.norm(A @ w - F) / np.linalg.norm(F))
    return w, res


def solve_adjoint_full(ops: OperatorSet, Rrho, mode: CharacteristicMode, F) -> AdjointSolution:
    N = ops.N
    F = np.asarray(F, float)
    if F.shape != (2 * N + 2,):
        raise ValueError(f"right-hand side has shape {F.shape}, expected ({2 * N + 2},)")
    w, res = _solve(full_matrix(ops, Rrho, mode), F)
    return AdjointSolution(w[:N], w[N:2 * N], float(w[2 * N]), float(w[2 * N + 1]), mode.pivot, res)


def reduced_matrix(ops: OperatorSet, Rrho, mode: CharacteristicMode) -> np.ndarray:
    N = ops.N
    I = mode.current
    M = ops.X0 - mode.xi * ops.R0
    if Rrho is not None:
        M = M - 1j * np.asarray(Rrho)
    RI = ops.R0 @ I
    A = np.zeros((N + 1, N + 1), complex)
    A[:N, :N] = M
    A[:N, N] = -RI
    A[N, :N] = -RI  # transpose border, R0 symmetric
    return A


def solve_adjoint_reduced(ops: OperatorSet, Rrho, mode: CharacteristicMode,
                          d_xi: complex) -> tuple[np.ndarray, complex]:
    """Complex ``(N+1)`` adjoint for objectives of ``xi`` alone.

    ``d_xi = df/dlam + j df/ddelta``.  Returns ``(z, a)`` with ``z`` usable in
    the same gradient formula as the full system.
    """
    N = ops.N
    rhs = np.zeros(N + 1, complex)
    rhs[N] = -complex(d_xi)
    y, res = _solve(reduced_matrix(ops, Rrho, mode), rhs)
    if res > 1e-8:
        log.warning("reduced adjoint residual %.2e", res)
    return np.conj(y[:N]), complex(y[N])


def assemble_gradient(z, mode: CharacteristicMode, dblocks, elements: MaterialElements,
                      explicit=None, design_mask=None) -> np.ndarray:
    """Per-triangle ``df/drho_t = explicit_t + Im(z^H dR_t I)``.

    ``dblocks`` are the (T, 3, 3) blocks ``Rs'(rho_t) B_t``; each triangle
    touches only its own three basis slots.
    """
    if isinstance(z, AdjointSolution):
        z = z.z
    idx = np.where(elements.index >= 0, elements.index, 0)
    zl = np.conj(np.asarray(z))[idx]
    Il = mode.current[idx]
    g = np.einsum("ti,tij,tj->t", zl, dblocks, Il).imag
    if explicit is not None:
        g = g + explicit
    if design_mask is not None:
        g = np.where(design_mask, g, 0.0)
    return g


# --- problem wrapper --------------------------------------------------------

@dataclass(eq=False)
class ModalProblem:
    """Objective of the physical density ``rho~`` with adjoint gradients.

    Evaluates ``spec`` on mode ``spec.mode`` of the lossy pencil, modes being
    ordered by ``|xi|`` (or by the supplied ``order`` permutation).
    """

    ops: OperatorSet
    elements: MaterialElements
    spec: ObjectiveSpec
    model: MaterialModel = field(default_factory=MaterialModel)
    areas: np.ndarray | None = None
    design_mask: np.ndarray | None = None
    n_modes: int | None = None
    backend: str = "auto"
    path: str = "auto"

    def __post_init__(self):
        if self.path not in ("auto", "full", "reduced"):
            raise ValueError(f"unknown adjoint path {self.path!r}")
        if self.path == "reduced" and self.spec.uses_current:
            raise ValueError("reduced adjoint requires an objective independent of the current")
        if self.spec.kind == "modal_q" and self.ops.X0p is None:
            raise ValueError("modal_q needs operators with a stored-energy matrix")

    def modes(self, rho_phys) -> tuple[ModeSet, np.ndarray]:
        Rrho = assemble_material_matrix(rho_phys, self.elements, self.model)
        n = self.n_modes or self.spec.mode + 1
        return solve_lossy(self.ops, Rrho, n, backend=self.backend), Rrho

    def evaluate(self, rho_phys, mode: CharacteristicMode | None = None) -> ObjectiveValue:
        return eval_objective(self.spec, mode, rho_phys, self.areas, self.design_mask,
                              self.ops.X0p, self.ops.R0)

    def value(self, rho_phys) -> float:
        if not self.spec.uses_modes:
            return self.evaluate(rho_phys).value
        ms, _ = self.modes(rho_phys)
        return self.evaluate(rho_phys, ms[self.spec.mode]).value

    def gradient_from_mode(self, rho_phys, mode: CharacteristicMode, Rrho,
                           others=None) -> tuple[float, np.ndarray]:
        obj = self.evaluate(rho_phys, mode)
        if not self.spec.uses_modes:
            return obj.value, np.asarray(obj.d_rho, float)
        if others is not None:
            xs = np.concatenate([[mode.xi], np.asarray(others, complex)])
            if any(0 in p for p in degenerate_pairs(xs)):
                raise DegeneracyError(f"characteristic number {mode.xi:.6g} is repeated")
        path = self.path
        if path == "auto":
            path = "full" if self.spec.uses_current else "reduced"
        if path == "full":
            z = solve_adjoint_full(self.ops, Rrho, mode, adjoint_rhs(obj, self.ops.N)).z
        else:
            z, _ = solve_adjoint_reduced(self.ops, Rrho, mode, obj.d_xi)
        dblocks = material_derivative_blocks(rho_phys, self.elements, self.model)
        g = assemble_gradient(z, mode, dblocks, self.elements, obj.d_rho, self.design_mask)
        return obj.value, g

    def value_and_gradient(self, rho_phys) -> tuple[float, np.ndarray]:
        rho_phys = np.asarray(rho_phys, float)
        if not self.spec.uses_modes:
            obj = self.evaluate(rho_phys)
            return obj.value, np.asarray(obj.d_rho, float)
        ms, Rrho = self.modes(rho_phys)
        k = self.spec.mode
        others = np.delete(ms.xi, k)
        return self.gradient_from_mode(rho_phys, ms[k], Rrho, others)


# --- verification harness ---------------------------------------------------

FD_STEPS = (1e-5, 1e-4, 1e-3)
REL_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class GradientReport:
    triangles: np.ndarray
    adjoint: np.ndarray
    fd: np.ndarray
    rel_error: np.ndarray
    breakdown: np.ndarray
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.rel_error <= self.threshold))

    @property
    def failures(self) -> list[int]:
        return [int(t) for t, e in zip(self.triangles, self.rel_error) if e > self.threshold]

    def summary(self) -> str:
        if self.passed:
            return f"gradient check passed: max rel error {self.rel_error.max():.2e}"
        return (f"gradient check FAILED (threshold {self.threshold:g}) at triangles "
                f"{self.failures}; max rel error {self.rel_error.max():.2e}")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("triangle_id,adjoint_grad,fd_grad,rel_error\n")
            for row in zip(self.triangles, self.adjoint, self.fd, self.rel_error):
                fh.write(f"{row[0]},{row[1]:.12e},{row[2]:.12e},{row[3]:.6e}\n")


def _fd_derivative(fun, rho, t, h):
    up, dn = rho.copy(), rho.copy()
    if rho[t] - h >= 0.0 and rho[t] + h <= 1.0:
        up[t] += h
        dn[t] -= h
        return (fun(up) - fun(dn)) / (2.0 * h)
    # one-sided second order near the bounds
    s = 1.0 if rho[t] + 2 * h <= 1.0 else -1.0
    up[t] += s * h
    dn[t] += 2 * s * h
    return s * (-3.0 * fun(rho) + 4.0 * fun(up) - fun(dn)) / (2.0 * h)


def finite_difference_check(problem, rho_phys, triangles, steps=FD_STEPS,
                            threshold: float = 1e-3, gradient=None) -> GradientReport:
    """Compare the adjoint gradient against central differences.

    ``problem`` needs ``value(rho)`` and ``value_and_gradient(rho)``.  For each
    triangle the step whose estimate agrees best with its neighbouring step is
    used; if the estimates over ``steps`` differ by more than 10x the entry is
    flagged as an FD breakdown.
    """
    rho = np.asarray(rho_phys, float)
    tri = np.asarray(triangles, int)
    if gradient is None:
        _, gradient = problem.value_and_gradient(rho)
    adj = np.asarray(gradient, float)[tri]
    steps = sorted(steps)
    fd = np.empty(len(tri))
    breakdown = np.zeros(len(tri), bool)
    for i, t in enumerate(tri):
        est = np.array([_fd_derivative(problem.value, rho, t, h) for h in steps])
        if len(est) > 1:
            diffs = np.abs(np.diff(est)) / np.maximum(np.abs(est[:-1]), 1e-300)
            j = int(np.argmin(diffs))
            fd[i] = est[j]
            mags = np.abs(est)
            breakdown[i] = mags.min() > 0 and mags.max() / mags.min() > 10.0
        else:
            fd[i] = est[0]
    # entries far below the gradient scale are limited by FD roundoff, not the adjoint
    floor = REL_FLOOR * max(np.abs(gradient).max(), 1e-300)
    rel = np.abs(adj - fd) / np.maximum(np.maximum(np.abs(fd), np.abs(adj)), floor)
    return GradientReport(tri, adj, fd, rel, breakdown, threshold)
