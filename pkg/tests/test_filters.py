import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charmode.filters import (DensityPipeline, FilterConfig, StaleCacheError, beta_schedule,
                              chain_rule, density_filter, filter_matrix, projection,
                              projection_derivative)
from charmode.mesh import generate_plate_mesh

MESH = generate_plate_mesh(1.0, 0.5, 8, 4, "crossed", jitter=0.2, seed=1)
W = filter_matrix(MESH, 0.15)


def test_filter_rows_sum_to_one():
    assert np.allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0)
    assert W.nnz > MESH.T  # genuinely averaging


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1))
def test_filter_preserves_constants(c):
    assert np.allclose(density_filter(np.full(MESH.T, c), W), c)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=MESH.T, max_size=MESH.T))
def test_filter_preserves_bounds(vals):
    out = density_filter(np.array(vals), W)
    assert out.min() >= min(vals) - 1e-12 and out.max() <= max(vals) + 1e-12


def test_filter_weights_are_hat():
    # a direct O(T^2) construction as the oracle
    c, A = MESH.centroids, MESH.areas
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    w = np.maximum(0.0, 0.15 - d) * A[None]
    assert np.allclose(W.toarray(), w / w.sum(1, keepdims=True), atol=1e-15)
    tiny = filter_matrix(MESH, 1e-6)
    assert np.allclose(tiny.toarray(), np.eye(MESH.T))


@pytest.mark.parametrize("beta", [1.0, 8.0, 64.0])
@pytest.mark.parametrize("eta", [0.3, 0.5, 0.7])
def test_projection_endpoints(beta, eta):
    assert projection(0.0, beta, eta) == 0.0
    assert projection(1.0, beta, eta) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1, 64), st.floats(0.2, 0.8))
def test_projection_monotone_and_derivative(x, beta, eta):
    h = 1e-6
    fd = (projection(x + h, beta, eta) - projection(x - h, beta, eta)) / (2 * h)
    assert np.isclose(projection_derivative(x, beta, eta), fd, rtol=1e-4, atol=1e-8)
    assert projection_derivative(x, beta, eta) >= 0


def test_projection_sharpens():
    x = np.array([0.3, 0.7])
    assert np.all(np.abs(projection(x, 64) - np.array([0, 1])) < 1e-10)


def test_beta_schedule():
    cfg = FilterConfig(rmin=0.1)
    vals = [beta_schedule(i, cfg) for i in (0, 74, 75, 149, 150, 300, 450, 10**6)]
    assert vals == [1, 1, 2, 2, 4, 16, 64, 64]
    with pytest.raises(ValueError):
        beta_schedule(-1, cfg)
    with pytest.raises(ValueError):
        FilterConfig(rmin=0.1, eta=1.0)
    with pytest.raises(ValueError):
        FilterConfig(rmin=0.0)


def _regions_mesh():
    labels = ["design"] * MESH.T
    for t in range(10):
        labels[t] = "fixed"
    for t in range(10, 16):
        labels[t] = "passive"
    return MESH.with_region(labels)


def test_pipeline_clamps_regions():
    m = _regions_mesh()
    pipe = DensityPipeline(m, 0.15)
    f = pipe.forward(np.full(pipe.n_design, 0.4), 4.0)
    assert np.all(f.projected[:10] == 1) and np.all(f.projected[10:16] == 0)
    assert np.all(f.raw[:10] == 1) and np.all(f.raw[10:16] == 0)
    with pytest.raises(ValueError):
        pipe.forward(np.zeros(3), 1.0)


def test_chain_rule_end_to_end_fd():
    m = _regions_mesh()
    pipe = DensityPipeline(m, 0.15)
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 0.9, pipe.n_design)
    c = rng.standard_normal(m.T)

    def F(x):
        return float(np.sum(c * pipe.forward(x, 3.0).projected ** 2))

    field = pipe.forward(x, 3.0)
    g = pipe.chain_rule(2 * c * field.projected, field, x)
    assert np.allclose(chain_rule(2 * c * field.projected, field, pipe.W), g)
    h = 1e-6
    for i in rng.choice(pipe.n_design, 8, replace=False):
        e = np.zeros_like(x)
        e[i] = h
        fd = (F(x + e) - F(x - e)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))
    with pytest.raises(StaleCacheError):
        pipe.chain_rule(c, field, x + 0.01)
