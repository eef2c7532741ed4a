"""Command line entry points.

Five subcommands cover the study workflows: ``spectrum`` compares the
singular values of the raw and preconditioned maps, ``design`` optimizes
a sensor placement, ``compare`` scores the optimized design against
reference designs, ``trace-study`` measures the randomized trace
estimator's accuracy, and ``rank-study`` sweeps the surrogate rank.

Every command writes comma separated files with full-precision floats, a
manifest recording the resolved configuration and all seeds, and (unless
disabled) rendered figures next to the data.
"""

import argparse
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .design import (
    PenaltySpec,
    TraceEstimatorSet,
    TraceObjective,
    bisect_gamma,
    continuation_solve,
    default_eps_schedule,
    optimize,
    threshold_l1_design,
)
from .fem import assemble
from .mesh import build_structured_mesh, read_mesh_file, write_mesh_file
from .observation import (
    ForwardMap,
    default_sensor_grid,
    make_observation_setup,
    read_sensor_file,
    write_sensor_file,
)
from .posterior import PosteriorModel, export_variance_csv
from .prior import PriorOperator
from .surrogate import build_surrogate, save_surrogate
from .transport import TransportOperators, VelocityField
from .whitening import WhiteningOperator

log = logging.getLogger("aoed")


def fmt(value):
    """Full-precision text for floats, plain text for everything else."""
    if isinstance(value, (float, np.floating)):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    return str(path)


def write_manifest(outdir, command, cfg, outputs):
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    path = Path(outdir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(path)


@dataclass
class Problem:
    cfg: object
    mesh: object
    fem: object
    prior: object
    whitening: object
    transport: object
    setup: object
    fmap: object


def build_problem(cfg):
    """Assemble the full pipeline described by a configuration."""
    holes = [tuple(h) for h in cfg.mesh.holes]
    if cfg.mesh.file:
        mesh = read_mesh_file(cfg.mesh.file, holes=holes)
    else:
        mesh = build_structured_mesh(cfg.mesh.resolution, holes=holes)
    log.info("mesh: %d nodes, %d triangles", mesh.n_nodes, mesh.n_triangles)
    fem = assemble(mesh)
    prior = PriorOperator(fem, alpha=cfg.prior.alpha, beta=cfg.prior.beta)
    whitening = WhiteningOperator(
        fem,
        mode=cfg.whitening.mode,
        degree=cfg.whitening.degree,
        dense_cap=cfg.whitening.dense_cap,
    )
    if cfg.transport.velocity == "analytic":
        velocity = VelocityField.analytic(
            scale=cfg.transport.velocity_scale,
            cutoff=cfg.transport.velocity_cutoff,
        )
    elif cfg.transport.velocity == "zero":
        velocity = VelocityField.zero()
    else:
        velocity = VelocityField.from_file(cfg.transport.velocity)
    transport = TransportOperators(
        mesh,
        fem,
        velocity,
        kappa=cfg.transport.kappa,
        t_final=cfg.transport.t_final,
        n_steps=cfg.transport.n_steps,
        allow_low_kappa=cfg.transport.allow_low_kappa,
    )
    if cfg.observation.sensor_file:
        sensors = read_sensor_file(cfg.observation.sensor_file)
    else:
        sensors = default_sensor_grid(
            holes,
            spacing=cfg.observation.sensor_spacing,
            margin=cfg.observation.sensor_margin,
            clearance=cfg.observation.sensor_clearance,
        )
    obs_times = np.linspace(
        cfg.observation.time_start, cfg.observation.time_end, cfg.observation.n_times
    )
    setup = make_observation_setup(mesh, sensors, obs_times, cfg.transport.t_final)
    log.info(
        "observations: %d sensors x %d times = %d entries",
        setup.n_sensors, setup.n_times, setup.n_obs,
    )
    fmap = ForwardMap(
        transport, setup, prior=prior, noise_sigma=cfg.observation.noise_sigma
    )
    return Problem(cfg, mesh, fem, prior, whitening, transport, setup, fmap)


def design_surrogate(problem):
    cfg = problem.cfg.surrogate
    surro = build_surrogate(
        problem.fmap,
        problem.whitening,
        rank=cfg.rank,
        oversampling=cfg.oversampling,
        power_iters=cfg.power_iters,
        seed=cfg.seed,
        residual_tol=cfg.residual_tol,
    )
    log.info(
        "surrogate: rank %d, residual %.2e",
        surro.rank, surro.meta.get("residual", float("nan")),
    )
    return surro


def make_objective(problem, surro):
    estimators = TraceEstimatorSet.draw(
        problem.whitening,
        count=problem.cfg.estimator.n_vectors,
        seed=problem.cfg.estimator.seed,
    )
    return TraceObjective(surro, problem.prior, estimators)


def _solve_design(problem, objective):
    """Run the configured penalty pipeline; returns (weights, rows, info)."""
    cfg = problem.cfg
    opt = cfg.optimizer
    common = dict(
        max_iter=opt.max_iter,
        grad_reduction=opt.grad_reduction,
        memory=opt.memory,
        mode=opt.mode,
    )
    if cfg.penalty.kind == "smoothed_l0":
        cont = continuation_solve(
            objective,
            cfg.penalty.gamma,
            eps_schedule=default_eps_schedule(cfg.penalty.eps_steps),
            binary_tol=cfg.penalty.binary_tol,
            **common,
        )
        rows = []
        offset = 0
        for _, _, res in cont.stages:
            rows.extend(
                (offset + r[0],) + tuple(r[1:]) for r in res.trace_rows
            )
            offset = rows[-1][0] if rows else offset
        info = {
            "penalty_kind": "smoothed_l0",
            "gamma": cfg.penalty.gamma,
            "binary": bool(cont.binary),
            "stages": [
                {
                    "penalty": kind,
                    "eps": eps,
                    "iterations": res.n_iterations,
                    "objective": res.objective,
                    "converged": bool(res.converged),
                }
                for kind, eps, res in cont.stages
            ],
        }
        return cont.weights, rows, info
    res = optimize(objective, PenaltySpec("l1", cfg.penalty.gamma), **common)
    binary = threshold_l1_design(res.weights.w, ratio=cfg.penalty.l1_threshold)
    weights = res.weights
    weights.w = binary
    weights.active_threshold = 0.5
    info = {
        "penalty_kind": "l1",
        "gamma": cfg.penalty.gamma,
        "binary": True,
        "stages": [
            {
                "penalty": "l1",
                "eps": None,
                "iterations": res.n_iterations,
                "objective": res.objective,
                "converged": bool(res.converged),
            }
        ],
    }
    return weights, res.trace_rows, info


def cmd_spectrum(cfg, outdir):
    problem = build_problem(cfg)
    n, q = problem.fmap.n, problem.fmap.n_obs
    spec = cfg.spectrum
    rank = min(spec.rank, min(n, q) - spec.oversampling)
    raw = build_surrogate(
        problem.fmap,
        problem.whitening,
        rank=rank,
        oversampling=spec.oversampling,
        power_iters=spec.power_iters,
        seed=cfg.surrogate.seed,
        preconditioned=False,
        check_probes=0,
    )
    pre = build_surrogate(
        problem.fmap,
        problem.whitening,
        rank=rank,
        oversampling=spec.oversampling,
        power_iters=spec.power_iters,
        seed=cfg.surrogate.seed,
        preconditioned=True,
        check_probes=0,
    )
    k = min(raw.rank, pre.rank)
    rows = [
        (
            i + 1,
            raw.S[i],
            pre.S[i],
            raw.S[i] / raw.S[0],
            pre.S[i] / pre.S[0],
        )
        for i in range(k)
    ]
    files = [
        write_csv(
            Path(outdir) / "spectrum.csv",
            ["k", "sigma_raw", "sigma_preconditioned",
             "sigma_raw_normalized", "sigma_preconditioned_normalized"],
            rows,
        )
    ]
    if cfg.output.plots:
        from . import plots

        files.append(
            plots.plot_spectrum(
                Path(outdir) / "spectrum.png", raw.S[:k], pre.S[:k]
            )
        )
    return files


def cmd_design(cfg, outdir):
    problem = build_problem(cfg)
    surro = design_surrogate(problem)
    objective = make_objective(problem, surro)
    before = dict(problem.transport.solve_counts)
    weights, rows, info = _solve_design(problem, objective)
    after = dict(problem.transport.solve_counts)
    info["pde_solves_during_optimization"] = {
        k: after[k] - before[k] for k in after
    }
    model = PosteriorModel(problem.fmap, problem.whitening, weights.w, surro=surro)
    info["exact_trace"] = model.exact_trace()
    info["objective_estimate"] = objective.objective(weights.w)
    info["n_active"] = weights.n_active
    log.info(
        "design: %d active sensors, posterior trace %.6g",
        weights.n_active, info["exact_trace"],
    )

    outdir = Path(outdir)
    files = [
        write_csv(
            outdir / "design.csv",
            ["sensor_index", "x", "y", "weight", "active"],
            [
                (j, x, y, w, int(a))
                for j, ((x, y), w, a) in enumerate(
                    zip(problem.setup.sensor_points, weights.w, weights.active())
                )
            ],
        ),
        write_csv(
            outdir / "optimizer_trace.csv",
            ["iter", "objective", "penalty", "projected_grad_norm",
             "n_active_sensors"],
            rows,
        ),
    ]
    save_surrogate(outdir / "surrogate.npz", surro)
    files.append(str(outdir / "surrogate.npz"))
    write_mesh_file(problem.mesh, outdir / "mesh.txt")
    files.append(str(outdir / "mesh.txt"))
    write_sensor_file(outdir / "sensor_candidates.txt", problem.setup.sensor_points)
    files.append(str(outdir / "sensor_candidates.txt"))
    with open(outdir / "design_summary.json", "w", encoding="utf-8") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")
    files.append(str(outdir / "design_summary.json"))

    variance = None
    if problem.fem.n <= cfg.whitening.dense_cap:
        variance = model.pointwise_variance()
        export_variance_csv(outdir / "variance.csv", problem.mesh, variance)
        files.append(str(outdir / "variance.csv"))

    if cfg.output.plots:
        from . import plots

        active_pts = problem.setup.sensor_points[weights.active()]
        files.append(
            plots.plot_design(
                outdir / "design.png",
                problem.mesh,
                problem.setup.sensor_points,
                weights.w,
            )
        )
        files.append(
            plots.plot_optimizer_trace(outdir / "optimizer_trace.png", rows)
        )
        files.append(
            plots.plot_mesh(
                outdir / "mesh.png", problem.mesh, problem.setup.sensor_points
            )
        )
        if variance is not None:
            files.append(
                plots.plot_variance_field(
                    outdir / "variance.png", problem.mesh, variance, active_pts
                )
            )
    return [f for f in files if f]


def _spread_design(points, count, n_sensors):
    """Deterministic well-spread subset: farthest point sampling."""
    center = points.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(points - center, axis=1)))
    chosen = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    w = np.zeros(n_sensors)
    w[chosen] = 1.0
    return w


def cmd_compare(cfg, outdir):
    problem = build_problem(cfg)
    surro = design_surrogate(problem)
    objective = make_objective(problem, surro)
    cont = continuation_solve(
        objective,
        cfg.penalty.gamma,
        eps_schedule=default_eps_schedule(cfg.penalty.eps_steps),
        binary_tol=cfg.penalty.binary_tol,
        max_iter=cfg.optimizer.max_iter,
        grad_reduction=cfg.optimizer.grad_reduction,
        memory=cfg.optimizer.memory,
    )
    w_opt = (cont.weights.w > 0.5).astype(float)
    target = int(w_opt.sum())
    log.info("optimal design: %d sensors", target)

    gamma_l1, w_l1, _ = bisect_gamma(
        objective,
        target,
        max_iter=cfg.optimizer.max_iter,
        grad_reduction=cfg.optimizer.grad_reduction,
        memory=cfg.optimizer.memory,
    )
    count_l1 = int(w_l1.sum())
    log.info("l1 design: %d sensors at gamma %.4g", count_l1, gamma_l1)

    ns = problem.setup.n_sensors
    designs = [("optimal", w_opt), ("l1", w_l1)]
    designs.append(
        ("uniform", _spread_design(problem.setup.sensor_points, target, ns))
    )
    rng = np.random.default_rng(cfg.compare.seed)
    for i in range(cfg.compare.n_random):
        w = np.zeros(ns)
        w[rng.choice(ns, size=target, replace=False)] = 1.0
        designs.append((f"random-{i}", w))

    rows = []
    for label, w in designs:
        model = PosteriorModel(problem.fmap, problem.whitening, w, surro=surro)
        rows.append(
            (
                label,
                int(np.count_nonzero(w > 0.5)),
                model.exact_trace(),
                objective.objective(w),
            )
        )
    files = [
        write_csv(
            Path(outdir) / "compare.csv",
            ["design", "n_active", "exact_trace", "objective_estimate"],
            rows,
        )
    ]
    if cfg.output.plots:
        from . import plots

        files.append(
            plots.plot_compare(
                Path(outdir) / "compare.png",
                [r[0] for r in rows],
                [r[1] for r in rows],
                [r[2] for r in rows],
            )
        )
    return files


def cmd_trace_study(cfg, outdir):
    problem = build_problem(cfg)
    surro = design_surrogate(problem)
    objective = make_objective(problem, surro)
    weights, _, _ = _solve_design(problem, objective)
    w = weights.w
    model = PosteriorModel(problem.fmap, problem.whitening, w, surro=surro)
    exact = model.exact_trace()
    log.info("reference design: %d sensors, exact trace %.8g",
             weights.n_active, exact)

    study = cfg.trace_study
    rows = []
    means = []
    for idx, n_vec in enumerate(study.n_vectors):
        errs = []
        for rep in range(study.repetitions):
            seed = study.seed + 1000 * idx + rep
            probes = TraceEstimatorSet.draw(
                problem.whitening, count=n_vec, seed=seed
            )
            est = TraceObjective(surro, problem.prior, probes).objective(w)
            rel = abs(est - exact) / abs(exact)
            errs.append(rel)
            rows.append((n_vec, rep, est, exact, rel))
        means.append(float(np.mean(errs)))
        log.info("n_vectors=%3d mean relative error %.4f", n_vec, means[-1])
    files = [
        write_csv(
            Path(outdir) / "trace_study.csv",
            ["n_vectors", "repetition", "estimate", "exact", "relative_error"],
            rows,
        ),
        write_csv(
            Path(outdir) / "trace_study_summary.csv",
            ["n_vectors", "mean_relative_error"],
            list(zip(study.n_vectors, means)),
        ),
    ]
    if cfg.output.plots:
        from . import plots

        files.append(
            plots.plot_trace_study(
                Path(outdir) / "trace_study.png", study.n_vectors, means
            )
        )
    return files


def cmd_rank_study(cfg, outdir):
    problem = build_problem(cfg)
    rows = []
    for rank in cfg.rank_study.ranks:
        before = sum(problem.transport.solve_counts.values())
        surro = build_surrogate(
            problem.fmap,
            problem.whitening,
            rank=rank,
            oversampling=cfg.surrogate.oversampling,
            power_iters=cfg.surrogate.power_iters,
            seed=cfg.surrogate.seed,
            residual_tol=np.inf,
            check_probes=0,
        )
        solves = sum(problem.transport.solve_counts.values()) - before
        objective = make_objective(problem, surro)
        res = optimize(
            objective,
            PenaltySpec("l1", cfg.rank_study.gamma),
            max_iter=cfg.optimizer.max_iter,
            grad_reduction=cfg.optimizer.grad_reduction,
            memory=cfg.optimizer.memory,
        )
        n_active = int(threshold_l1_design(res.weights.w).sum())
        rows.append(
            (rank, res.objective, n_active, res.n_iterations, solves)
        )
        log.info(
            "rank %3d: objective %.8g, %d active, %d iterations",
            rank, res.objective, n_active, res.n_iterations,
        )
    files = [
        write_csv(
            Path(outdir) / "rank_study.csv",
            ["rank", "objective", "n_active", "n_iterations", "pde_solves"],
            rows,
        )
    ]
    if cfg.output.plots:
        from . import plots

        files.append(
            plots.plot_rank_study(
                Path(outdir) / "rank_study.png",
                [r[0] for r in rows],
                [r[1] for r in rows],
            )
        )
    return files


COMMANDS = {
    "spectrum": cmd_spectrum,
    "design": cmd_design,
    "compare": cmd_compare,
    "trace-study": cmd_trace_study,
    "rank-study": cmd_rank_study,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="aoed",
        description="A-optimal sensor placement for advection-diffusion inversion",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default=None, help="YAML configuration file")
        p.add_argument(
            "--seed", type=int, default=None,
            help="master seed; offsets all stage seeds deterministically",
        )
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="configuration override, e.g. surrogate.rank=80",
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress logs")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(name)s: %(message)s",
    )
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg.estimator.seed = args.seed
        cfg.surrogate.seed = args.seed + 1
        cfg.compare.seed = args.seed + 2
        cfg.trace_study.seed = args.seed + 3
    outdir = Path(args.out if args.out else cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)

    files = COMMANDS[args.command](cfg, outdir)
    manifest = write_manifest(outdir, args.command, cfg, files)
    log.info("wrote %d files to %s", len(files) + 1, outdir)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
