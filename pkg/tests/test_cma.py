import warnings

import numpy as np
import pytest
import scipy.linalg as sl

from charmode.assembly import OperatorSet
from charmode.cma import (CharacteristicMode, DegeneracyWarning, EigenSolverError, ModeSet,
                          characteristic_angle, degenerate_pairs, modal_q, modal_significance,
                          normalize_current, quotient_xi, solve_lossless, solve_lossy,
                          track_modes, tuned_q)
from charmode.material import assemble_material_matrix


def random_ops(rng, N, rank=None):
    B = rng.standard_normal((N, rank or N))
    R0 = B @ B.T + (1e-3 * np.eye(N) if rank is None else 0)
    X = rng.standard_normal((N, N))
    return OperatorSet(R0, X + X.T, 1.0)


def lossy_roots_2x2(A, R):
    # det(A - xi R) = 0 as a quadratic in xi
    a = R[0, 0] * R[1, 1] - R[0, 1] * R[1, 0]
    b = -(A[0, 0] * R[1, 1] + A[1, 1] * R[0, 0] - A[0, 1] * R[1, 0] - A[1, 0] * R[0, 1])
    c = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    s = np.sqrt(b * b - 4 * a * c + 0j)
    return np.array([(-b + s) / (2 * a), (-b - s) / (2 * a)])


@pytest.mark.parametrize("backend", ["dense", "arnoldi"])
def test_lossless_matches_reference(rng, backend):
    ops = random_ops(rng, 40)
    ms = solve_lossless(ops, 6, backend=backend)
    ref = sl.eigh(ops.X0, ops.R0, eigvals_only=True)
    ref = ref[np.argsort(np.abs(ref))][:6]
    assert np.allclose(ms.lam, ref, rtol=1e-10)
    for m in ms:
        assert np.allclose(ops.X0 @ m.current, m.lam * ops.R0 @ m.current,
                           atol=1e-8 * np.abs(m.lam) * np.linalg.norm(ops.R0))
        assert np.isclose(m.current @ ops.R0 @ m.current, 1.0)


def test_lossy_2x2_closed_form(rng):
    for _ in range(20):
        ops = random_ops(rng, 2)
        Rr = np.diag(rng.uniform(0.1, 3, 2))
        xi = solve_lossy(ops, Rr, 2).xi
        ref = lossy_roots_2x2(ops.X0 - 1j * Rr, ops.R0)
        ref = ref[np.argsort(np.abs(ref))]
        assert np.allclose(xi, ref, rtol=1e-12)


def test_normalization_and_pivot(rng):
    ops = random_ops(rng, 12)
    I = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    J, k = normalize_current(I * (2 - 3j), ops.R0)
    assert np.isclose(np.vdot(J, ops.R0 @ J).real, 1.0)
    assert J[k].imag == 0 and J[k].real > 0
    assert k == np.argmax(np.abs(I))
    with pytest.raises(EigenSolverError):
        normalize_current(np.zeros(12), ops.R0)


def test_lossy_quotient_identities(small_plate, rng):
    p = small_plate
    Rr = assemble_material_matrix(rng.uniform(0.3, 0.7, p.mesh.T), p.elements)
    ms = solve_lossy(p.ops, Rr, 4)
    for m in ms:
        assert np.isclose(quotient_xi(m.current, p.ops, Rr), m.xi, rtol=1e-8)
        assert m.delta >= -1e-10
    assert np.all(np.diff(np.abs(ms.xi)) >= 0)


def test_arnoldi_agrees_with_dense(small_plate, rng):
    p = small_plate
    Rr = assemble_material_matrix(rng.uniform(0.3, 0.7, p.mesh.T), p.elements)
    d = solve_lossy(p.ops, Rr, 3, backend="dense").xi
    a = solve_lossy(p.ops, Rr, 3, backend="arnoldi").xi
    assert np.allclose(d, a, rtol=1e-9)


def test_projected_fallback_on_singular_R0(rng):
    ops = random_ops(rng, 10, rank=6)
    ms = solve_lossless(ops, 3, backend="projected", refine=False)
    s, U = np.linalg.eigh(ops.R0)
    U = U[:, s > 1e-12 * s.max()]
    assert U.shape[1] == 6
    for m in ms:
        # Galerkin residual on the radiating subspace vanishes
        r = U.T @ (ops.X0 @ m.current - m.lam * ops.R0 @ m.current)
        assert np.linalg.norm(r) < 1e-9 * np.linalg.norm(ops.X0)
        assert np.allclose(m.current, U @ (U.T @ m.current))
    with pytest.raises(EigenSolverError):
        solve_lossless(ops, 9, backend="projected")


def test_degeneracy_warning():
    R0 = np.eye(3)
    X0 = np.diag([1.0, 1.0 + 1e-9, 5.0])
    with pytest.warns(DegeneracyWarning):
        solve_lossy(OperatorSet(R0, X0, 1.0), np.eye(3) * 0.1, 2)
    assert degenerate_pairs([1.0, 1.0 + 1e-9, 3.0]) == [(0, 1)]


def test_tracking_recovers_permutation(rng):
    ops = random_ops(rng, 15)
    ms = solve_lossless(ops, 5)
    perm = [3, 0, 4, 1, 2]
    shuffled = ms.reorder(perm)
    back = track_modes(ms, shuffled, ops.R0)
    assert [perm[i] for i in back] == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        track_modes(ms, ModeSet(ms.modes[:2]), ops.R0)


def test_ambiguous_tracking_keeps_order():
    R0 = np.eye(2)
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    prev = ModeSet([CharacteristicMode(1.0, v.astype(complex), 0)])
    new = ModeSet([CharacteristicMode(1.0, np.array([1.0, 0j]), 0),
                   CharacteristicMode(2.0, np.array([0j, 1.0]), 1)])
    with pytest.warns(DegeneracyWarning):
        assert track_modes(prev, new, R0) == [0]


def test_angle_and_significance():
    assert characteristic_angle(0.0) == np.pi
    assert np.isclose(characteristic_angle(1.0), 0.75 * np.pi)
    assert modal_significance(0.0) == 1.0
    assert np.isclose(modal_significance(2.0), 0.2)
    assert np.isclose(modal_significance(2.0, conventional=True), 1 / np.sqrt(5))


def test_modal_q_matches_frequency_slope(small_plate):
    """At fixed current, Q equals (k/2) dlam/dk of the Rayleigh quotient."""
    from charmode.assembly import assemble_impedance
    p = small_plate
    I = solve_lossless(p.ops, 1)[0].current
    h = 1e-4
    q = []
    for s in (1 + h, 1 - h):
        o = assemble_impedance(p.mesh, p.basis, p.ops.k * s)
        q.append(quotient_xi(I, o).real)
    # d/dk of I^T X I / I^T R I includes the R0 variation; subtract it explicitly
    lam = quotient_xi(I, p.ops).real
    o_p = assemble_impedance(p.mesh, p.basis, p.ops.k * (1 + h))
    o_m = assemble_impedance(p.mesh, p.basis, p.ops.k * (1 - h))
    kdR = (I @ (o_p.R0 - o_m.R0) @ I) / (2 * h)
    kdX = (I @ (o_p.X0 - o_m.X0) @ I) / (2 * h)
    assert np.isclose(modal_q(I, p.ops.X0p, p.ops.R0), kdX / (2 * (I @ p.ops.R0 @ I)), rtol=1e-6)
    assert np.isclose(tuned_q(I, p.ops.X0p, p.ops.R0, lam),
                      modal_q(I, p.ops.X0p, p.ops.R0) + abs(lam) / 2)
    assert np.isfinite(kdR) and q[0] != q[1]
