import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charmode.material import (Z_AIR, Z_MET, MaterialModel, assemble_material_matrix,
                               interpolate_resistivity, material_derivative_blocks,
                               material_matrix_derivative, resistivity_derivative)


def test_endpoints_exact():
    m = MaterialModel()
    assert interpolate_resistivity(m, 0.0) == Z_AIR == 1e5
    assert interpolate_resistivity(m, 1.0) == Z_MET == 0.01


def test_midpoint_value():
    # rho = 1/2 gives exponent 1/3 of the resistivity ratio
    m = MaterialModel()
    assert np.isclose(interpolate_resistivity(m, 0.5), 1e5 * (1e-7) ** (1 / 3), rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_strictly_decreasing(a, b):
    if abs(a - b) < 1e-9:  # below double resolution of the exponent
        return
    m = MaterialModel()
    lo, hi = min(a, b), max(a, b)
    assert interpolate_resistivity(m, lo) > interpolate_resistivity(m, hi)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1e2, 1e7), st.floats(1e-4, 1.0))
def test_derivative_matches_fd(rho, za, zm):
    m = MaterialModel(za, zm)
    h = 1e-6
    fd = (interpolate_resistivity(m, rho + h) - interpolate_resistivity(m, rho - h)) / (2 * h)
    assert np.isclose(resistivity_derivative(m, rho), fd, rtol=1e-6)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        MaterialModel(1.0, 2.0)
    with pytest.raises(ValueError):
        interpolate_resistivity(MaterialModel(), [0.5, 1.2])
    with pytest.raises(ValueError):
        interpolate_resistivity(MaterialModel(), np.nan)


def test_material_matrix_first_order(small_plate, rng):
    el = small_plate.elements
    rho = rng.uniform(0.2, 0.8, small_plate.mesh.T)
    m = MaterialModel()
    R = assemble_material_matrix(rho, el, m)
    assert np.allclose(R, R.T)
    t, d = 5, 1e-7
    rho2 = rho.copy()
    rho2[t] += d
    dR = (assemble_material_matrix(rho2, el, m) - R) / d
    idx, block = material_matrix_derivative(rho, el, t, m)
    ref = np.zeros_like(R)
    ref[np.ix_(idx, idx)] = block
    assert np.allclose(dR, ref, atol=1e-5 * np.abs(ref).max())
    blocks = material_derivative_blocks(rho, el, m)
    assert np.allclose(blocks[t][np.ix_(el.index[t] >= 0, el.index[t] >= 0)], block)
    with pytest.raises(ValueError):
        assemble_material_matrix(rho[:-1], el, m)
    mask = np.zeros(small_plate.mesh.T, bool)
    with pytest.raises(ValueError):
        material_matrix_derivative(rho, el, t, m, design_mask=mask)
