"""Command-line driver: ``charmode <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import ModalProblem, ObjectiveSpec, finite_difference_check
from .assembly import assemble_impedance, assemble_material_elements, cached_operators
from .cma import (DegeneracyError, EigenSolverError, modal_q, modal_significance, solve_lossless,
                  solve_lossy, tuned_q)
from .filters import FilterConfig
from .fixtures import MeanderLayout, meander_fixture
from .material import MaterialModel, assemble_material_matrix
from .mesh import (DIAGONAL_RULES, Mesh, build_rwg, circumscribing_radius, generate_plate_mesh,
                   load_mesh, save_mesh)
from .optimizer import DesignProblem, OptConfig, RunHistory, final_area_fraction, run_optimization
from .postprocess import (NoCrossingError, SweepResult, find_resonance, find_resonances,
                          frequency_sweep, gaussian_smooth, is_binary, material_model_study,
                          parse_range, read_design_csv, submesh, threshold, write_design_csv,
                          write_vtk)

log = logging.getLogger("charmode")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_DEGENERATE = 0, 1, 2, 3, 4

# Lower bounds on (ka)^3 Q of the first mode for the 2:1 rectangular
# region, quoted from the literature for ka = 0.5 and 0.7 (not computed here).
Q_BOUND_KA05 = 5.27
Q_BOUND_KA07 = 5.25
Q_BOUNDS = {0.5: Q_BOUND_KA05, 0.7: Q_BOUND_KA07}


class ConfigError(ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {m}" for k, m in problems))

    @property
    def keys(self) -> list[str]:
        return [k for k, _ in self.problems]


# --- configuration ---------------------------------------------------------

@dataclass
class MeshConfig:
    file: str | None = None
    fixture: str | None = None
    length: float = 1.0
    width: float = 0.5
    nx: int = 20
    ny: int = 10
    rule: str = "crossed"
    jitter: float = 0.0
    seed: int | None = None


@dataclass
class FilterSection:
    rmin_rel: float = 0.1
    beta0: float = 1.0
    beta_mult: float = 2.0
    beta_period: int = 75
    beta_max: float = 64.0
    eta: float = 0.5


@dataclass
class AssemblySection:
    order: int = 3
    stored_energy: str = "fd"


@dataclass
class RunConfig:
    ka: float = 0.5
    output: str = "out"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialModel = field(default_factory=MaterialModel)
    filter: FilterSection = field(default_factory=FilterSection)
    opt: OptConfig = field(default_factory=OptConfig)
    assembly: AssemblySection = field(default_factory=AssemblySection)
    conventional_t: bool = False  # report 1/sqrt(1+lam^2) instead of 1/(1+lam^2)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"mesh": MeshConfig, "material": MaterialModel, "filter": FilterSection,
             "opt": OptConfig, "assembly": AssemblySection}


def _check_types(section: str, cls, raw: dict, problems: list) -> dict:
    names = {f.name: f for f in fields(cls)}
    out = {}
    for k, v in raw.items():
        if k not in names:
            problems.append((f"{section}.{k}", "unknown key"))
            continue
        out[k] = v
    return out


def load_config(source, base: Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a JSON file or dict, collecting every
    offending key before raising :class:`ConfigError`."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([("config", f"file {path} not found")])
        except json.JSONDecodeError as exc:
            raise ConfigError([("config", f"invalid JSON: {exc}")])
        base = path.parent
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise ConfigError([("config", "top level must be an object")])
    problems: list[tuple[str, str]] = []
    top = {"ka", "output", "conventional_t"} | set(_SECTIONS)
    for k in raw:
        if k not in top:
            problems.append((k, "unknown key"))
    parts = {}
    for name, cls in _SECTIONS.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            problems.append((name, "must be an object"))
            sec = {}
        parts[name] = _check_types(name, cls, sec, problems)

    # range checks, key by key
    ka = raw.get("ka", 0.5)
    if not isinstance(ka, (int, float)) or not ka > 0:
        problems.append(("ka", "must be a positive number"))
    m = parts["mesh"]
    if m.get("file"):
        f = Path(m["file"])
        if base is not None and not f.is_absolute():
            f = base / f
        if not f.exists():
            problems.append(("mesh.file", f"file {f} not found"))
        m["file"] = str(f)
    if m.get("fixture") not in (None, "meander"):
        problems.append(("mesh.fixture", "only 'meander' is built in"))
    for k in ("nx", "ny"):
        if k in m and (not isinstance(m[k], int) or m[k] < 1):
            problems.append((f"mesh.{k}", "must be a positive integer"))
    for k in ("length", "width"):
        if k in m and not (isinstance(m[k], (int, float)) and m[k] > 0):
            problems.append((f"mesh.{k}", "must be positive"))
    if "rule" in m and m["rule"] not in DIAGONAL_RULES:
        problems.append(("mesh.rule", f"must be one of {DIAGONAL_RULES}"))
    if "jitter" in m and not (isinstance(m["jitter"], (int, float)) and 0 <= m["jitter"] < 0.5):
        problems.append(("mesh.jitter", "must lie in [0, 0.5)"))
    mat = parts["material"]
    za, zm = mat.get("z_air", MaterialModel().z_air), mat.get("z_met", MaterialModel().z_met)
    bad_mat = [k for k, v in (("z_air", za), ("z_met", zm))
               if not (isinstance(v, (int, float)) and v > 0)]
    if not bad_mat and not za > zm:
        bad_mat = [k for k in ("z_air", "z_met") if k in mat] or ["z_air"]
    for k in bad_mat:
        problems.append((f"material.{k}", "need z_air > z_met > 0"))
    fl = parts["filter"]
    checks = {"rmin_rel": lambda v: v > 0, "beta0": lambda v: v >= 1, "beta_mult": lambda v: v >= 1,
              "beta_period": lambda v: isinstance(v, int) and v >= 1,
              "beta_max": lambda v: v >= fl.get("beta0", 1.0), "eta": lambda v: 0 < v < 1}
    for k, ok in checks.items():
        if k in fl:
            v = fl[k]
            if not isinstance(v, (int, float)) or not ok(v):
                problems.append((f"filter.{k}", "out of range"))
    op = parts["opt"]
    try:
        OptConfig(**op)
    except ValueError as exc:
        for msg in str(exc).split("; "):
            key, _, text = msg.partition(" ") if msg.startswith("opt.") else ("opt", "", msg)
            problems.append((key, text))
    except TypeError as exc:
        problems.append(("opt", str(exc)))
    asm = parts["assembly"]
    if "order" in asm and asm["order"] not in (1, 3, 7):
        problems.append(("assembly.order", "must be 1, 3 or 7"))
    if "stored_energy" in asm and asm["stored_energy"] not in ("fd", "analytic"):
        problems.append(("assembly.stored_energy", "must be 'fd' or 'analytic'"))
    conv = raw.get("conventional_t", False)
    if not isinstance(conv, bool):
        problems.append(("conventional_t", "must be true or false"))
    if problems:
        raise ConfigError(problems)
    return RunConfig(ka=float(ka), output=str(raw.get("output", "out")), conventional_t=conv,
                     mesh=MeshConfig(**m), material=MaterialModel(**mat), filter=FilterSection(**fl),
                     opt=OptConfig(**op), assembly=AssemblySection(**asm))


def build_mesh(mc: MeshConfig) -> Mesh:
    if mc.file:
        return load_mesh(mc.file)
    if mc.fixture == "meander":
        return meander_fixture(MeanderLayout())
    return generate_plate_mesh(mc.length, mc.width, mc.nx, mc.ny, mc.rule, mc.jitter, mc.seed)


def build_problem(cfg: RunConfig, threads: int = 1, stored_energy: bool | None = None):
    mesh = build_mesh(cfg.mesh)
    basis = build_rwg(mesh)
    a = circumscribing_radius(mesh)
    need_q = cfg.opt.objective == "modal_q" if stored_energy is None else stored_energy
    ops = cached_operators(mesh, basis, cfg.ka / a, order=cfg.assembly.order,
                           stored_energy=cfg.assembly.stored_energy if need_q else None,
                           threads=threads)
    el = assemble_material_elements(mesh, basis)
    f = cfg.filter
    fcfg = FilterConfig(f.rmin_rel * a, f.eta, f.beta0, f.beta_mult, f.beta_period, f.beta_max)
    return DesignProblem(mesh, ops, el, fcfg, cfg.material), a


# --- subcommands -----------------------------------------------------------

def _mesh_for(args_mesh, design_path) -> Mesh:
    path = Path(args_mesh) if args_mesh else Path(design_path).parent / "mesh.json"
    if not path.exists():
        raise FileNotFoundError(f"mesh file {path} not found (pass --mesh)")
    return load_mesh(path)


def cmd_mesh_gen(args) -> int:
    if args.fixture:
        mesh = meander_fixture(MeanderLayout())
    else:
        mesh = generate_plate_mesh(args.length, args.width, args.nx, args.ny, args.rule,
                                   args.jitter, args.seed)
    save_mesh(mesh, args.output)
    print(json.dumps({"triangles": mesh.T, "bases": build_rwg(mesh).N,
                      "a": circumscribing_radius(mesh), "output": str(args.output)}))
    return EXIT_OK


def analyse_modes(mesh: Mesh, rho, ka: float, n_modes: int, a: float | None = None,
                  model: MaterialModel = MaterialModel(), threads: int = 1,
                  conventional_t: bool = False) -> list[dict]:
    a = circumscribing_radius(mesh) if a is None else a
    rho = np.ones(mesh.T) if rho is None else np.asarray(rho, float)
    binary = is_binary(rho)
    work = submesh(mesh, rho > 0.5)[0] if binary else mesh
    basis = build_rwg(work)
    ops = assemble_impedance(work, basis, ka / a, stored_energy="fd", threads=threads)
    n = min(n_modes, basis.N - 1)
    if binary:
        ms = solve_lossless(ops, n)
    else:
        Rrho = assemble_material_matrix(rho, assemble_material_elements(work, basis), model)
        ms = solve_lossy(ops, Rrho, n)
    rows = []
    for i, md in enumerate(ms):
        q = modal_q(md.current, ops.X0p, ops.R0)
        qt = tuned_q(md.current, ops.X0p, ops.R0, md.lam)
        rows.append({"mode": i + 1, "lambda": md.lam, "delta": md.delta, "alpha": float(md.alpha),
                     "t": float(modal_significance(md.lam, conventional_t)), "Q": q, "Q_tuned": qt, "ka3Q": ka**3 * qt})
    return rows


def cmd_cma(args) -> int:
    mesh = load_mesh(args.mesh)
    rho = read_design_csv(args.design) if args.design else None
    rows = analyse_modes(mesh, rho, args.ka, args.modes, threads=args.threads,
                         conventional_t=args.conventional_t)
    out = Path(args.output)
    with open(out, "w") as fh:
        fh.write("mode,lambda,delta,alpha,t,Q,Q_tuned\n")
        for r in rows:
            fh.write(f"{r['mode']},{r['lambda']!r},{r['delta']!r},{r['alpha']!r},{r['t']!r},"
                     f"{r['Q']!r},{r['Q_tuned']!r}\n")
    print(json.dumps(rows[0]))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg.output = args.output
    if args.max_iters:
        cfg.opt.max_iters = args.max_iters
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    problem, a = build_problem(cfg, args.threads)
    save_mesh(problem.mesh, out / "mesh.json")
    res = run_optimization(problem, cfg.opt)
    hist = res.history
    if hist.records:
        hist.write_csv(out / "history.csv")
    rho = res.field.projected
    write_design_csv(out / "design.csv", rho)
    write_design_csv(out / "design_raw.csv", res.field.raw)
    write_vtk(out / "design.vtk", problem.mesh, rho)
    binary = threshold(rho, 0.5, problem.mesh)
    write_design_csv(out / "design_binary.csv", binary)
    results = {"status": hist.status, "message": hist.message, "iterations": len(hist),
               "ka": cfg.ka, "a": a, "area_fraction": final_area_fraction(problem, rho),
               "t_form": T_FORMS[cfg.conventional_t]}
    if hist.records:
        last = hist.records[-1]
        results.update(final_lambda=last.lam, final_delta=last.delta, objective=last.objective)
    try:
        rows = analyse_modes(problem.mesh, binary, cfg.ka, max(cfg.opt.n_modes, 1), a,
                             threads=args.threads, conventional_t=cfg.conventional_t)
        results["binary_modes"] = rows
    except (EigenSolverError, ValueError) as exc:
        results["binary_modes_error"] = str(exc)
    (out / "results.json").write_text(json.dumps(results, indent=2, default=float))
    print(json.dumps({k: results[k] for k in ("status", "iterations", "area_fraction")}))
    if hist.status == "degenerate":
        _error_record("degeneracy", hist.message)
        return EXIT_DEGENERATE
    if hist.status == "solver_failure":
        _error_record("solver", hist.message)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sweep(args) -> int:
    mesh = _mesh_for(args.mesh, args.design)
    rho = read_design_csv(args.design)
    if len(rho) != mesh.T:
        raise ValueError(f"design has {len(rho)} entries for {mesh.T} triangles")
    ka = parse_range(args.ka)
    s = frequency_sweep(mesh, rho, ka, n_modes=args.modes, with_q=not args.no_q,
                        design_id=str(args.design))
    out = Path(args.output) if args.output else Path(args.design).parent / "sweep.csv"
    s.to_csv(out)
    res = {f"mode_{n + 1}": find_resonances(s.ka, s.lam[:, n]) for n in range(s.n_modes)}
    print(json.dumps({"output": str(out), "rows": len(s.ka), "resonances": res,
                      "failures": s.failures}))
    return EXIT_OK


def cmd_threshold(args) -> int:
    rho = read_design_csv(args.design)
    mesh = None
    try:
        mesh = _mesh_for(args.mesh, args.design)
    except FileNotFoundError:
        if args.mesh:
            raise
    write_design_csv(args.output, threshold(rho, args.level, mesh))
    return EXIT_OK


def cmd_smooth(args) -> int:
    mesh = _mesh_for(args.mesh, args.design)
    rho = threshold(read_design_csv(args.design), 0.5, mesh)
    out = gaussian_smooth(rho, mesh, args.sigma, args.raster_res, args.rmin)
    write_design_csv(args.output, out)
    return EXIT_OK


def cmd_check_grad(args) -> int:
    cfg = load_config(args.config)
    problem, _ = build_problem(cfg, args.threads)
    rng = np.random.default_rng(args.seed)
    rho = np.where(problem.mesh.region_mask("fixed"), 1.0, 0.0)
    design = problem.design_mask
    rho[design] = rng.uniform(0.3, 0.7, design.sum())
    kind = "modal_q" if cfg.opt.objective == "modal_q" else "resonance"
    spec = ObjectiveSpec(kind, nu=cfg.opt.nu, gamma=cfg.opt.gamma)
    mp = ModalProblem(problem.ops, problem.elements, spec, cfg.material, problem.mesh.areas,
                      design, n_modes=3)
    tri = rng.choice(np.flatnonzero(design), size=min(args.samples, design.sum()), replace=False)
    rep = finite_difference_check(mp, rho, np.sort(tri), threshold=args.threshold)
    out = Path(args.output) if args.output else Path(cfg.output) / "check_grad.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out)
    print(rep.summary())
    if not rep.passed:
        _error_record("gradient_check", rep.summary(), triangles=rep.failures)
        return EXIT_FAIL
    return EXIT_OK


def cmd_study_material(args) -> int:
    mesh = load_mesh(args.mesh) if args.mesh else meander_fixture(MeanderLayout())
    zs = [float(z) for z in args.zair.split(",")]
    st = material_model_study(mesh, parse_range(args.ka), parse_range(args.rho), zs, args.ka_ref)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    st.to_csv(out / "contour.csv")
    _plot_study(st, out / "material_study.png")
    print(json.dumps({"output": str(out / "contour.csv")}))
    return EXIT_OK


def cmd_report(args) -> int:
    summary = emit_report(Path(args.run), Path(args.sweep) if args.sweep else None)
    print(json.dumps(summary, default=float))
    return EXIT_OK


# --- reporting --------------------------------------------------------------

def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _plot_study(st, path):
    plt = _plt()
    fig, ax = plt.subplots(1, 3, figsize=(13, 4))
    R, K = np.meshgrid(st.rho, st.ka)
    c0 = ax[0].contourf(K, R, np.clip(st.lam, -20, 20), 30)
    fig.colorbar(c0, ax=ax[0], label="lambda_1")
    c1 = ax[1].contourf(K, R, np.log10(np.maximum(st.delta, 1e-6)), 30)
    fig.colorbar(c1, ax=ax[1], label="log10 delta_1")
    for z, zv in enumerate(st.z_air):
        ax[2].semilogy(st.rho, np.maximum(st.delta_z[z], 1e-12), label=f"Z_air={zv:g}")
    for a_ in ax[:2]:
        a_.set_xlabel("ka")
        a_.set_ylabel("rho")
    ax[2].set_xlabel("rho")
    ax[2].set_ylabel(f"delta_1 at ka={st.ka_ref:g}")
    ax[2].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


T_FORMS = {False: "1/(1+lam^2)", True: "1/sqrt(1+lam^2)"}


def q_bound(ka: float) -> float | None:
    for k, v in Q_BOUNDS.items():
        if abs(ka - k) < 1e-9:
            return v
    return None


def emit_report(run_dir: Path, sweep_path: Path | None = None) -> dict:
    """Plots and a summary table for a finished run directory."""
    hist_path = run_dir / "history.csv"
    if not hist_path.exists():
        raise FileNotFoundError(f"{hist_path} is missing")
    hist = RunHistory.read_csv(hist_path)
    if not hist.records:
        raise ValueError("empty history")
    results = json.loads((run_dir / "results.json").read_text()) if (run_dir / "results.json").exists() else {}
    ka = results.get("ka")
    last = hist.records[-1]
    summary = {"iterations": len(hist), "final_objective": last.objective,
               "final_lambda": last.lam, "final_delta": last.delta,
               "t_form": results.get("t_form", T_FORMS[False]),
               "final_t": [modal_significance(v, results.get("t_form") == T_FORMS[True])
                           for v in last.lam],
               "area_fraction": results.get("area_fraction")}
    modes = results.get("binary_modes")
    if modes:
        summary["binary_lambda"] = [m["lambda"] for m in modes]
        summary["binary_ka3Q"] = [m["ka3Q"] for m in modes]
        if ka is not None:
            summary["ka3Q_bound"] = q_bound(ka)
    plt = _plt()
    it = hist.column("iteration")
    fig, ax = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    ax[0].semilogy(it, np.abs(hist.column("objective")))
    ax[0].set_ylabel("objective")
    ax[1].plot(it, hist.lam)
    ax[1].set_ylabel("lambda_n")
    ax[2].semilogy(it, np.maximum(np.abs(hist.delta), 1e-16))
    ax[2].set_ylabel("delta_n")
    ax[2].set_xlabel("iteration")
    for b in np.flatnonzero(np.diff(hist.column("beta")) > 0):
        for a_ in ax:
            a_.axvline(it[b + 1], color="0.8", lw=0.8)
    fig.tight_layout()
    fig.savefig(run_dir / "convergence.png", dpi=100)
    plt.close(fig)
    if sweep_path is None and (run_dir / "sweep.csv").exists():
        sweep_path = run_dir / "sweep.csv"
    if sweep_path is not None:
        s = SweepResult.from_csv(sweep_path)
        summary["resonances"] = [find_resonances(s.ka, s.lam[:, n]) for n in range(s.n_modes)]
        if ka is not None:
            try:
                summary["resonance_shift"] = find_resonance(s, 0) - ka
            except NoCrossingError:
                summary["resonance_shift"] = None
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(s.ka, s.alpha / np.pi)
        ax.axhline(1.0, color="k", lw=0.6)
        ax.set_xlabel("ka")
        ax.set_ylabel("alpha_n / pi")
        fig.tight_layout()
        fig.savefig(run_dir / "sweep.png", dpi=100)
        plt.close(fig)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    with open(run_dir / "summary.md", "w") as fh:
        fh.write("| quantity | value |\n|---|---|\n")
        for k, v in summary.items():
            fh.write(f"| {k} | {v} |\n")
    return summary


# --- entry point ------------------------------------------------------------

def _error_record(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="charmode", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=1, help="worker threads for assembly")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh-gen", help="generate a plate or fixture mesh")
    s.add_argument("--length", type=float, default=1.0)
    s.add_argument("--width", type=float, default=0.5)
    s.add_argument("--nx", type=int, default=20)
    s.add_argument("--ny", type=int, default=10)
    s.add_argument("--rule", choices=DIAGONAL_RULES, default="crossed")
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--fixture", choices=["meander"])
    s.add_argument("-o", "--output", default="mesh.json")
    s.set_defaults(func=cmd_mesh_gen)

    s = sub.add_parser("cma", help="characteristic modes of a design at one ka")
    s.add_argument("--mesh", required=True)
    s.add_argument("--design")
    s.add_argument("--ka", type=float, required=True)
    s.add_argument("--modes", type=int, default=5)
    s.add_argument("--conventional-t", action="store_true",
                   help="report 1/sqrt(1+lam^2) as the modal significance")
    s.add_argument("-o", "--output", default="modes.csv")
    s.set_defaults(func=cmd_cma)

    s = sub.add_parser("optimize", help="run a topology optimization")
    s.add_argument("--config", required=True)
    s.add_argument("-o", "--output")
    s.add_argument("--max-iters", type=int)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", help="frequency sweep of a design")
    s.add_argument("--design", required=True)
    s.add_argument("--mesh")
    s.add_argument("--ka", required=True, help="start:stop:count")
    s.add_argument("--modes", type=int, default=3)
    s.add_argument("--no-q", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("threshold", help="round a density to a binary design")
    s.add_argument("--design", required=True)
    s.add_argument("--mesh")
    s.add_argument("--level", type=float, default=0.5)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("smooth", help="Gaussian boundary smoothing of a binary design")
    s.add_argument("--design", required=True)
    s.add_argument("--mesh")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--raster-res", type=float)
    s.add_argument("--rmin", type=float)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_smooth)

    s = sub.add_parser("check-grad", help="adjoint vs finite-difference gradient report")
    s.add_argument("--config", required=True)
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=1e-3)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_check_grad)

    s = sub.add_parser("study-material", help="material-model study on the meander fixture")
    s.add_argument("--mesh")
    s.add_argument("--ka", default="0.5:1.1:7")
    s.add_argument("--rho", default="0:1:11")
    s.add_argument("--zair", default="1e5,1e3,1e7")
    s.add_argument("--ka-ref", type=float, default=0.7)
    s.add_argument("-o", "--output", default="study")
    s.set_defaults(func=cmd_study_material)

    s = sub.add_parser("report", help="plots and summary for a run directory")
    s.add_argument("--run", required=True)
    s.add_argument("--sweep")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _error_record("config", str(exc), keys=exc.keys)
        return EXIT_CONFIG
    except DegeneracyError as exc:
        _error_record("degeneracy", str(exc))
        return EXIT_DEGENERATE
    except EigenSolverError as exc:
        _error_record("solver", str(exc))
        return EXIT_SOLVER
    except (FileNotFoundError, ValueError) as exc:
        _error_record("input", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
