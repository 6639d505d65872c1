"""Outer topology-optimization loop over the lossy characteristic modes."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import ModalProblem, ObjectiveSpec, area_fraction
from .assembly import MaterialElements, OperatorSet
from .cma import (DegeneracyError, DegeneracyWarning, EigenSolverError, ModeSet,
                  degenerate_pairs, solve_lossy, track_modes)
from .filters import DensityField, DensityPipeline, FilterConfig, beta_schedule
from .material import MaterialModel, assemble_material_matrix
from .mesh import Mesh
from .mma import MMA, MmaSettings

log = logging.getLogger(__name__)

OBJECTIVES = ("resonance", "modal_q", "minmax")
FEAS_TOL = 1e-6
# step rejection: relative objective increase tolerated at fixed beta, and the
# move-limit floor below which steps are accepted regardless
ASCENT_TOL = 1e-4
MIN_MOVE = 1e-3


@dataclass
class OptConfig:
    """Optimizer settings.

    ``objective`` is one of ``resonance``, ``modal_q`` or ``minmax``; ``sf``
    adds the minimum-area constraint when set.  ``n_modes`` is the number of
    tracked modes (used by ``minmax``); ``extra_modes`` more are computed so
    tracking can follow modes that swap order.

    With ``safeguard`` a step that raises the objective of a feasible design
    at unchanged beta is rejected: the loop returns to the previous design
    and retries with half the move limit.  Accepted steps grow the limit back
    towards ``move_limit``.  Rejected evaluations leave gaps in the recorded
    iteration numbers.
    """

    objective: str = "resonance"
    nu: float = 0.1
    gamma: float = 1.0
    sf: float | None = None
    n_modes: int = 1
    extra_modes: int = 3
    max_iters: int = 450
    move_limit: float = 0.2
    init_rho: float = 0.5
    init_noise: float = 0.0
    seed: int | None = None
    tol: float = 1e-3
    tol_window: int = 10
    snapshot_every: int = 0
    backend: str = "auto"
    safeguard: bool = True

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        e = []
        if self.objective not in OBJECTIVES:
            e.append(f"opt.objective must be one of {OBJECTIVES}")
        if self.nu < 0:
            e.append("opt.nu must be >= 0")
        if self.gamma < 0:
            e.append("opt.gamma must be >= 0")
        if self.sf is not None and not 0 <= self.sf <= 1:
            e.append("opt.sf must lie in [0, 1]")
        if self.n_modes < 1:
            e.append("opt.n_modes must be >= 1")
        if self.max_iters < 1:
            e.append("opt.max_iters must be >= 1")
        if not 0 < self.move_limit <= 1:
            e.append("opt.move_limit must lie in (0, 1]")
        if not 0 <= self.init_rho <= 1:
            e.append("opt.init_rho must lie in [0, 1]")
        if self.init_noise < 0:
            e.append("opt.init_noise must be >= 0")
        return e


@dataclass
class IterationRecord:
    iteration: int
    beta: float
    objective: float
    lam: list
    delta: list
    constraints: list
    max_drho: float
    seconds: float


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    status: str = "running"
    message: str = ""

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration indices must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def lam(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def delta(self) -> np.ndarray:
        return np.array([r.delta for r in self.records])

    def write_csv(self, path) -> None:
        if not self.records:
            raise ValueError("empty history")
        nm = len(self.records[0].lam)
        nc = len(self.records[0].constraints)
        head = (["iter", "beta", "objective"] + [f"lambda_{i + 1}" for i in range(nm)]
                + [f"delta_{i + 1}" for i in range(nm)] + [f"constraint_{i + 1}" for i in range(nc)]
                + ["max_drho"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for r in self.records:
                w.writerow([r.iteration, repr(r.beta), repr(r.objective)] + [repr(v) for v in r.lam]
                           + [repr(v) for v in r.delta] + [repr(v) for v in r.constraints]
                           + [repr(r.max_drho)])

    @classmethod
    def read_csv(cls, path) -> RunHistory:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        li = [i for i, h in enumerate(head) if h.startswith("lambda_")]
        di = [i for i, h in enumerate(head) if h.startswith("delta_")]
        ci = [i for i, h in enumerate(head) if h.startswith("constraint_")]
        h = cls(status="loaded")
        for r in body:
            h.append(IterationRecord(int(r[0]), float(r[1]), float(r[2]), [float(r[i]) for i in li],
                                     [float(r[i]) for i in di], [float(r[i]) for i in ci],
                                     float(r[-1]), 0.0))
        return h


@dataclass(eq=False)
class DesignProblem:
    """Everything fixed during a run: geometry, operators and filters."""

    mesh: Mesh
    ops: OperatorSet
    elements: MaterialElements
    filter: FilterConfig
    model: MaterialModel = field(default_factory=MaterialModel)

    def __post_init__(self):
        self.pipeline = DensityPipeline(self.mesh, self.filter.rmin, self.filter.eta)

    @property
    def design_mask(self) -> np.ndarray:
        return self.pipeline.design


def bound_formulation(values, scale: float = 1.0):
    """Min-max as a bound problem: minimise ``zeta`` subject to
    ``v_n / scale - zeta <= 0``.  Returns the smallest feasible ``zeta * scale``
    and a function mapping ``(values, zeta)`` to constraint values."""
    values = np.asarray(values, float)
    scale = max(1.0, float(scale))

    def constraints(vals, zeta):
        return np.asarray(vals, float) / scale - zeta

    return float(values.max()), constraints


@dataclass
class OptimizationResult:
    field: DensityField
    history: RunHistory
    x: np.ndarray
    modes: ModeSet | None


def _initial_design(problem: DesignProblem, cfg: OptConfig) -> np.ndarray:
    n = problem.pipeline.n_design
    x = np.full(n, cfg.init_rho)
    if cfg.init_noise > 0:
        rng = np.random.default_rng(cfg.seed)
        x = np.clip(x + cfg.init_noise * rng.uniform(-1, 1, n), 0.0, 1.0)
    return x


class _ModeTracker:
    def __init__(self, n_track: int):
        self.n = n_track
        self.prev: ModeSet | None = None

    def __call__(self, ms: ModeSet, R0) -> ModeSet:
        if self.prev is None:
            out = ModeSet(list(ms.modes[: self.n]))
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                perm = track_modes(self.prev, ms, R0)
            out = ms.reorder(perm)
        self.prev = out
        return out


def run_optimization(problem: DesignProblem, cfg: OptConfig, fcfg: FilterConfig | None = None,
                     x0=None, callback=None) -> OptimizationResult:
    """filter -> lossy CMA -> track -> objectives -> adjoint -> chain rule -> MMA."""
    fcfg = fcfg or problem.filter
    pipe = problem.pipeline
    ops, mesh = problem.ops, problem.mesh
    n_track = cfg.n_modes if cfg.objective == "minmax" else 1
    n_solve = min(ops.N - 1, n_track + cfg.extra_modes)
    x = _initial_design(problem, cfg) if x0 is None else np.asarray(x0, float).copy()
    n = len(x)
    minmax = cfg.objective == "minmax"
    has_area = cfg.sf is not None
    m = (n_track if minmax else 0) + (1 if has_area else 0)
    nvar = n + (1 if minmax else 0)
    mma = MMA(nvar, m, 0.0, 1.0, settings=MmaSettings(move=cfg.move_limit))

    def spec(kind, k=0):
        return ObjectiveSpec(kind, mode=k, nu=cfg.nu, gamma=cfg.gamma, sf=cfg.sf or 0.0)

    obj_kind = "modal_q" if cfg.objective == "modal_q" else "resonance"
    probs = [ModalProblem(ops, problem.elements, spec(obj_kind if not minmax else "resonance", k),
                          problem.model, mesh.areas, pipe.design, backend=cfg.backend)
             for k in range(n_track)]
    area_prob = ModalProblem(ops, problem.elements, spec("area"), problem.model, mesh.areas, pipe.design)

    tracker = _ModeTracker(n_track)
    hist = RunHistory()
    f_scale = None
    zeta_scale = None
    zeta = None
    quiet = 0
    tracked = None
    move = cfg.move_limit
    prev = None  # last accepted evaluation
    fieldv = pipe.forward(x, beta_schedule(0, fcfg))
    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        beta = beta_schedule(it, fcfg)
        fieldv = pipe.forward(x, beta)
        rho = fieldv.projected
        Rrho = assemble_material_matrix(rho, problem.elements, problem.model)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                ms = solve_lossy(ops, Rrho, n_solve, backend=cfg.backend)
            tracked = tracker(ms, ops.R0)
            vals, grads = [], []
            for k, p in enumerate(probs):
                mode = tracked[k]
                others = np.array([xi for xi in ms.xi if xi != mode.xi])
                v, g = p.gradient_from_mode(rho, mode, Rrho, others)
                vals.append(v)
                grads.append(pipe.chain_rule(g, fieldv))
        except DegeneracyError as exc:
            hist.status, hist.message = "degenerate", f"iteration {it}: {exc}"
            log.error(hist.message)
            break
        except EigenSolverError as exc:
            hist.status, hist.message = "solver_failure", f"iteration {it}: {exc}"
            log.error(hist.message)
            break
        cons, cgrads = [], []
        if has_area:
            hv, hg = area_prob.value_and_gradient(rho)
            cons.append(hv)
            cgrads.append(pipe.chain_rule(hg, fieldv))
        lam = [float(md.lam) for md in tracked]
        delta = [float(md.delta) for md in tracked]

        if minmax:
            if zeta_scale is None:
                zeta_scale = max(1.0, max(vals))
                zeta = min(1.0, max(vals) / zeta_scale)
            _, hfun = bound_formulation(vals, zeta_scale)
            hvals = hfun(vals, zeta)
            objective = float(max(vals))
            f0, df0 = zeta, np.r_[np.zeros(n), 1.0]
            fval = list(hvals) + [c for c in cons]
            dfdx = [np.r_[g / zeta_scale, -1.0] for g in grads] + [np.r_[g, 0.0] for g in cgrads]
            xv = np.r_[x, zeta]
            cons_rec = list(hvals * zeta_scale) + cons
        else:
            objective = vals[0]
            if f_scale is None:
                f_scale = max(abs(objective), 1e-12)
            f0, df0 = objective / f_scale, grads[0] / f_scale
            fval, dfdx, xv = cons, cgrads, x
            cons_rec = cons

        feasible = not cons or max(cons) <= FEAS_TOL
        if (cfg.safeguard and prev is not None and prev["beta"] == beta and prev["feasible"]
                and feasible and move > MIN_MOVE
                and objective > prev["objective"] + ASCENT_TOL * abs(prev["objective"])):
            move = max(0.5 * move, MIN_MOVE)
            log.info("it %d: objective rose to %.6g; retrying with move %.3g", it, objective, move)
            x, zeta = prev["x"], prev["zeta"]
            tracker.prev = prev["tracked"]
            mma.settings.move = move
            xnew = mma.update(*prev["args"])
            if minmax:
                zeta = float(xnew[-1])
                xnew = xnew[:-1]
            x = xnew
            continue
        if prev is not None:
            move = min(cfg.move_limit, 1.5 * move)
            mma.settings.move = move
        args = (xv, f0, df0, fval if m else None, np.array(dfdx) if m else None)
        prev = {"beta": beta, "objective": objective, "feasible": feasible, "x": x.copy(),
                "zeta": zeta, "args": args, "tracked": tracked}
        xnew = mma.update(*args)
        if minmax:
            zeta = float(xnew[-1])
            xnew = xnew[:-1]
        dmax = float(np.abs(xnew - x).max())
        x = xnew
        rec = IterationRecord(it, beta, float(objective), lam, delta,
                              [float(c) for c in cons_rec], dmax, time.perf_counter() - t0)
        hist.append(rec)
        if cfg.snapshot_every and it % cfg.snapshot_every == 0:
            hist.snapshots[it] = rho.copy()
        if callback is not None:
            callback(rec)
        log.info("it %d beta %g f %.6g lam %s dmax %.3g", it, beta, objective,
                 np.round(lam, 5), dmax)
        quiet = quiet + 1 if dmax < cfg.tol else 0
        if quiet >= cfg.tol_window and beta >= fcfg.beta_max:
            hist.status = "converged"
            break
    else:
        hist.status = "max_iters"
    if hist.status in ("converged", "max_iters"):
        fieldv = pipe.forward(x, beta)
    return OptimizationResult(fieldv, hist, x, tracked)


def config_dict(cfg: OptConfig) -> dict:
    return asdict(cfg)


def final_area_fraction(problem: DesignProblem, rho) -> float:
    return area_fraction(rho, problem.mesh.areas, problem.design_mask)[0]
