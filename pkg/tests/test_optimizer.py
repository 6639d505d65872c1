import numpy as np
import pytest

from charmode.assembly import assemble_impedance, assemble_material_elements
from charmode.filters import FilterConfig
from charmode.mesh import build_rwg, circumscribing_radius, generate_plate_mesh
from charmode.optimizer import (ASCENT_TOL, DesignProblem, IterationRecord, OptConfig, RunHistory,
                                bound_formulation, final_area_fraction, run_optimization)


@pytest.fixture(scope="module")
def problem():
    mesh = generate_plate_mesh(1.0, 0.5, 8, 4, "alternating", jitter=0.1, seed=4)
    basis = build_rwg(mesh)
    a = circumscribing_radius(mesh)
    ops = assemble_impedance(mesh, basis, 1.0 / a, stored_energy="fd")
    return DesignProblem(mesh, ops, assemble_material_elements(mesh, basis),
                         FilterConfig(rmin=0.15 * a, beta_period=10, beta_max=4))


def test_resonance_run_improves(problem, tmp_path):
    res = run_optimization(problem, OptConfig(max_iters=25, init_noise=0.2, seed=0))
    h = res.history
    assert h.status in ("max_iters", "converged") and len(h) <= 25
    assert np.all(np.diff(h.column("iteration")) > 0) and h.records[-1].iteration <= 24
    assert h.records[-1].objective < 0.5 * h.records[0].objective
    assert sorted(set(h.column("beta"))) == [1.0, 2.0, 4.0]
    h.write_csv(tmp_path / "h.csv")
    back = RunHistory.read_csv(tmp_path / "h.csv")
    assert np.array_equal(back.lam, h.lam) and np.array_equal(back.column("objective"),
                                                               h.column("objective"))
    assert res.field.projected.shape == (problem.mesh.T,)


def test_runs_are_deterministic(problem, tmp_path):
    cfg = OptConfig(max_iters=6, init_noise=0.3, seed=11)
    for name in ("a", "b"):
        run_optimization(problem, cfg).history.write_csv(tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_area_constraint_enforced(problem):
    res = run_optimization(problem, OptConfig(max_iters=40, sf=0.8, init_rho=0.5))
    last = res.history.records[-1]
    assert len(last.constraints) == 1
    assert final_area_fraction(problem, res.field.projected) >= 0.8 - 2e-2


def test_minmax_run(problem):
    res = run_optimization(problem, OptConfig(objective="minmax", n_modes=2, max_iters=8,
                                              init_noise=0.2, seed=3))
    h = res.history
    assert h.lam.shape[1] == 2 and len(h) <= 8
    assert len(h.records[0].constraints) == 2
    assert h.records[-1].objective <= h.records[0].objective


def test_modal_q_run(problem):
    res = run_optimization(problem, OptConfig(objective="modal_q", gamma=1.0, max_iters=4))
    assert 1 <= len(res.history) <= 4 and np.isfinite(res.history.records[-1].objective)


def test_config_validation_lists_every_key():
    cfg = OptConfig.__new__(OptConfig)
    cfg.__dict__.update(OptConfig().__dict__)
    cfg.objective, cfg.nu, cfg.move_limit, cfg.sf = "fast", -1, 0.0, 2.0
    errs = cfg.validate()
    assert [e.split()[0] for e in errs] == ["opt.objective", "opt.nu", "opt.sf", "opt.move_limit"]
    with pytest.raises(ValueError, match="opt.max_iters"):
        OptConfig(max_iters=0)


def test_history_order_and_empty_write(tmp_path):
    h = RunHistory()
    with pytest.raises(ValueError):
        h.write_csv(tmp_path / "x.csv")
    h.append(IterationRecord(0, 1.0, 1.0, [1.0], [0.0], [], 0.1, 0.0))
    with pytest.raises(ValueError):
        h.append(IterationRecord(0, 1.0, 1.0, [1.0], [0.0], [], 0.1, 0.0))


def test_bound_formulation():
    top, cons = bound_formulation([3.0, 7.0, 5.0], scale=7.0)
    assert top == 7.0
    assert np.allclose(cons([3.0, 7.0, 5.0], 1.0), [3 / 7 - 1, 0, 5 / 7 - 1])


def test_safeguard_keeps_objective_monotone_at_fixed_beta(problem):
    guarded = run_optimization(problem, OptConfig(max_iters=30, init_noise=0.3, seed=5)).history
    f, beta = guarded.column("objective"), guarded.column("beta")
    same = beta[1:] == beta[:-1]
    assert np.all(f[1:][same] <= f[:-1][same] * (1 + ASCENT_TOL) + 1e-12)
    free = run_optimization(problem, OptConfig(max_iters=30, init_noise=0.3, seed=5,
                                               safeguard=False)).history
    assert len(free) == 30 and list(free.column("iteration")) == list(range(30))
