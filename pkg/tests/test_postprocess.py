import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charmode.cma import solve_lossless
from charmode.assembly import assemble_impedance
from charmode.mesh import MeshError, build_rwg, circumscribing_radius, generate_plate_mesh
from charmode.postprocess import (NoCrossingError, SweepResult, connected_components,
                                  find_resonance, find_resonances, frequency_sweep,
                                  gaussian_smooth, is_binary, parse_range, q_from_slope,
                                  read_design_csv, read_vtk, submesh, threshold,
                                  write_design_csv, write_vtk)

MESH = generate_plate_mesh(1.0, 0.5, 10, 5, "alternating")


def test_threshold_and_regions():
    rho = np.linspace(0, 1, MESH.T)
    out = threshold(rho, 0.5)
    assert is_binary(out) and np.array_equal(out, (rho >= 0.5).astype(float))
    labels = ["fixed"] + ["passive"] + ["design"] * (MESH.T - 2)
    out = threshold(np.full(MESH.T, 0.3), 0.5, MESH.with_region(labels))
    assert out[0] == 1 and out[1] == 0 and out[2:].sum() == 0
    with pytest.raises(ValueError):
        threshold(rho, 1.0)


def test_submesh_and_components():
    x = MESH.centroids[:, 0]
    rho = ((x < -0.2) | (x > 0.2)).astype(float)  # two separated blocks
    n, labels = connected_components(MESH, rho)
    assert n == 2
    assert np.all(labels[rho == 0] == -1)
    sub, idx = submesh(MESH, rho > 0.5)
    assert sub.T == int(rho.sum()) and np.allclose(sub.areas, MESH.areas[idx])
    with pytest.raises(MeshError):
        submesh(MESH, np.zeros(MESH.T, bool))


def test_gaussian_smooth_keeps_simple_shapes():
    x = MESH.centroids[:, 0]
    rho = (x < 0).astype(float)  # half plate: a straight boundary survives blurring
    out = gaussian_smooth(rho, MESH, sigma=0.02, rmin=0.1)
    assert np.array_equal(out, rho)
    assert np.array_equal(gaussian_smooth(rho, MESH, sigma=0.0, raster_res=0.01), rho)
    # an isolated single triangle is removed by a wide blur
    spot = np.zeros(MESH.T)
    spot[MESH.T // 2] = 1
    assert gaussian_smooth(spot, MESH, sigma=0.1, rmin=0.1).sum() == 0
    with pytest.raises(ValueError, match="pixels"):
        gaussian_smooth(rho, MESH, sigma=0.02, raster_res=0.08, rmin=0.1)


def test_parse_range():
    assert np.allclose(parse_range("0.4:1.2:5"), [0.4, 0.6, 0.8, 1.0, 1.2])
    for bad in ("1:0:5", "0:1", "a:b:c", "0:1:1"):
        with pytest.raises(ValueError):
            parse_range(bad)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.3, 2.0))
def test_find_resonance_linear_exact(root, slope, span):
    ka = np.linspace(root - span / 3, root + 2 * span / 3, 7)
    assert np.isclose(find_resonance((ka, slope * (ka - root))), root, atol=1e-9)


def test_find_resonances_multiple_and_none():
    ka = np.linspace(0, 2 * np.pi, 400)
    roots = find_resonances(ka, np.sin(ka + 0.1))
    assert len(roots) == 2 and np.allclose(roots, [np.pi - 0.1, 2 * np.pi - 0.1], atol=1e-4)
    with pytest.raises(NoCrossingError):
        find_resonance((ka, ka + 1))


def test_q_from_slope_linear():
    ka = np.linspace(0.5, 1.5, 11)
    assert np.isclose(q_from_slope(ka, 4 * (ka - 1), 1.0), 2.0)


def test_sweep_of_pec_plate(tmp_path):
    mesh = generate_plate_mesh(1.0, 0.5, 6, 3, "alternating")
    ka = np.linspace(0.8, 1.6, 5)
    s = frequency_sweep(mesh, np.ones(mesh.T), ka, n_modes=2)
    basis = build_rwg(mesh)
    a = circumscribing_radius(mesh)
    ref = solve_lossless(assemble_impedance(mesh, basis, ka[2] / a), 2).lam
    assert np.allclose(np.sort(s.lam[2]), np.sort(ref), rtol=1e-10)
    assert np.all(s.delta == 0) and not s.failures
    s.to_csv(tmp_path / "s.csv")
    back = SweepResult.from_csv(tmp_path / "s.csv")
    assert np.array_equal(back.lam, s.lam) and np.array_equal(back.q, s.q)
    with pytest.raises(ValueError):
        frequency_sweep(mesh, np.ones(mesh.T), ka[::-1])


def test_gray_sweep_is_lossy():
    mesh = generate_plate_mesh(1.0, 0.5, 4, 2, "alternating")
    s = frequency_sweep(mesh, np.full(mesh.T, 0.5), [0.5, 0.6], n_modes=1, with_q=False)
    assert np.all(s.delta > 0) and np.all(np.isnan(s.q))


def test_design_files_roundtrip(tmp_path):
    rho = np.random.default_rng(0).uniform(size=MESH.T)
    write_design_csv(tmp_path / "d.csv", rho)
    assert np.array_equal(read_design_csv(tmp_path / "d.csv"), rho)
    write_vtk(tmp_path / "d.vtk", MESH, rho)
    m2, r2 = read_vtk(tmp_path / "d.vtk")
    assert np.allclose(m2.nodes, MESH.nodes) and np.array_equal(m2.triangles, MESH.triangles)
    assert np.allclose(r2, rho, rtol=1e-12)
