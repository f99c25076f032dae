"""Command-line orchestration: one subcommand per experiment.

Every experiment reads a JSON config validated against the versioned schema
in runio, derives all randomness from the single root seed, writes its CSV
and JSON artifacts into the output directory, and finishes with a manifest
echoing the config. CSV bodies are byte-identical across reruns of the same
config; wall-clock lives only in the manifest.

Exit codes: 0 success, 1 runtime failure inside an experiment, 2 config or
schema violation.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

import numpy as np

from .geometry import HardSphereModel, uniform_admissible_sample
from .pdfs import build_family
from .quadrature import QuadratureSpec
from .runio import (
    artifact_path,
    build_manifest,
    read_json,
    resolve_out_dir,
    validate_config,
    write_csv,
    write_json,
)
from .seeding import derive_child_seed

EXPERIMENT_COMMANDS = ("k1", "ks", "ops", "md", "bg-sweep", "noncomm",
                       "chaos", "relax", "entropy")


def _model_from(config: dict) -> HardSphereModel:
    m = config.get("model")
    if m is None:
        raise ValueError("this experiment needs a 'model' section")
    return HardSphereModel(n=int(m["n"]), sigma=float(m["sigma"]),
                           box=float(m["box"]))


def _sequence_args(config: dict):
    s = config.get("sequence")
    if s is None:
        raise ValueError("this experiment needs a 'sequence' section")
    return float(s["c"]), float(s["box"]), [int(n) for n in s["ns"]]


def _pdf_from(config: dict, box: float):
    spec = config.get("pdf", {"family": "uniform_maxwell"})
    return build_family(spec, box)


def _quad_from(config: dict) -> QuadratureSpec:
    q = dict(config.get("quadrature", {}))
    return QuadratureSpec(**q)


def _box_of(config: dict) -> float:
    if "model" in config:
        return float(config["model"]["box"])
    if "sequence" in config:
        return float(config["sequence"]["box"])
    raise ValueError("config needs a 'model' or 'sequence' section")


# ---------------------------------------------------------------------------
# experiment runners: each returns (artifact names, report dict)


def _run_k1(config, seed, out_dir, threads):
    from .occupation import hat_normalization, solve_k1

    model = _model_from(config)
    pdf = _pdf_from(config, model.box)
    p = config.get("k1", {})
    field = solve_k1(model, pdf, grid_nodes=p.get("grid_nodes", 8),
                     samples_per_node=p.get("samples_per_node", 1_000_000),
                     seed=derive_child_seed(seed, "cli", "k1"),
                     tol=p.get("tol", 1e-3), threads=threads)
    field.to_csv(artifact_path(out_dir, "k1_field.csv"))
    report = {
        "sup_abs_k1_minus_1": field.sup_abs_deviation(),
        "hat_normalization": hat_normalization(model, pdf, field),
        "solver": field.info,
    }
    return ["k1_field.csv"], report


def _run_ks(config, seed, out_dir, threads):
    from .occupation import contact_pair_tuples, estimate_ks, solve_k1

    model = _model_from(config)
    pdf = _pdf_from(config, model.box)
    p = config.get("ks", {})
    k1p = config.get("k1", {})
    field = solve_k1(model, pdf, grid_nodes=k1p.get("grid_nodes", 6),
                     samples_per_node=k1p.get("samples_per_node", 200_000),
                     seed=derive_child_seed(seed, "cli", "ks", "k1"))
    tuples = contact_pair_tuples(
        model, pdf, p.get("tuple_count", 20),
        derive_child_seed(seed, "cli", "ks", "tuples"),
        separation_factor=p.get("separation_factor", 2.2))
    positions = [np.stack([pt.r for pt in tp]) for tp in tuples]
    occ = estimate_ks(model, pdf, positions,
                      samples=p.get("samples", 200_000),
                      seed=derive_child_seed(seed, "cli", "ks", "mc"),
                      k1_field=field)
    rows = []
    for pts, ks, err in zip(occ.points, occ.ks_values, occ.mc_error):
        rows.append(list(pts[0]) + list(pts[1]) + [float(ks), float(err)])
    write_csv(artifact_path(out_dir, "ks_pairs.csv"),
              ["x1", "y1", "z1", "x2", "y2", "z2", "ks", "stderr"], rows)
    report = {
        "s": occ.s,
        "sup_abs_ks_minus_1": float(np.abs(occ.ks_values - 1.0).max()),
        "max_mc_error": float(occ.mc_error.max()),
        "info": occ.info,
    }
    return ["ks_pairs.csv"], report


def _run_ops(config, seed, out_dir, threads):
    from .bg import bulk_phase_probes
    from .collision import moment_audit, operator_scan
    from .occupation import ContactOccupancy, solve_k1

    model = _model_from(config)
    pdf = _pdf_from(config, model.box)
    quad = _quad_from(config)
    p = config.get("ops", {})
    k1p = config.get("k1", {})
    field = solve_k1(model, pdf, grid_nodes=k1p.get("grid_nodes", 6),
                     samples_per_node=k1p.get("samples_per_node", 200_000),
                     seed=derive_child_seed(seed, "cli", "ops", "k1"))
    occ = ContactOccupancy(model, field)
    probes = bulk_phase_probes(model, pdf, p.get("probes", 12),
                               derive_child_seed(seed, "cli", "ops", "probes"))
    rho2_form = p.get("rho2_form", "pair_over_k1sq")
    flavor = p.get("flavor", "both")
    artifacts = []
    report = {"rho2_form": rho2_form, "audits": {}}
    header = ["x", "y", "z", "vx", "vy", "vz", "C_value", "C_error",
              "gain", "loss"]
    for fl in ("master", "boltzmann"):
        if flavor not in (fl, "both"):
            continue
        rows = operator_scan(model, pdf, probes, quad, fl,
                             pair_occ=occ if fl == "master" else None,
                             rho2_form=rho2_form)
        name = f"ops_{fl}.csv"
        write_csv(artifact_path(out_dir, name), header, rows)
        artifacts.append(name)
        # audit cost scales as outer^3 * inner^3 * angles; cap the inner
        # kernel grid and use the compact Gauss-Hermite outer moment rule
        audit_quad = replace(quad,
                             velocity_nodes=min(quad.velocity_nodes, 14),
                             angle_nodes=min(quad.angle_nodes, 75))
        audit = moment_audit(model, pdf, probes[0][0], audit_quad, fl,
                             pair_occ=occ if fl == "master" else None,
                             rho2_form=rho2_form, outer_nodes=10)
        report["audits"][fl] = {
            "residuals": audit.residuals,
            "scales": audit.scales,
            "worst_relative": audit.worst_relative(),
            "velocity_nodes": audit_quad.velocity_nodes,
            "angle_nodes": audit_quad.angle_nodes,
            "outer_nodes": 10,
        }
    return artifacts, report


def _run_md(config, seed, out_dir, threads):
    from .md import MeasureSpec, enskog_frequency_prediction, measure, run
    from .md import near_contact_pair_prediction, wall_rate_prediction

    model = _model_from(config)
    p = config.get("md", {})
    pdf_spec = config.get("pdf", {"family": "uniform_maxwell"})
    v_th = float(pdf_spec.get("v_th", 1.0))
    t_end = p.get("t_end")
    max_events = p.get("max_events")
    snapshots = p.get("snapshots", 0)
    if snapshots and t_end is None:
        raise ValueError("snapshots need an explicit md.t_end")
    snap_times = None
    if snapshots:
        eq = p.get("equilibration_fraction", 0.2)
        snap_times = np.linspace(eq * t_end, t_end, snapshots)
    config0 = uniform_admissible_sample(
        model, derive_child_seed(seed, "cli", "md", "init"), v_th=v_th)
    traj = run(model, config0, t_end=t_end, max_events=max_events,
               snapshot_times=snap_times,
               record_cap=p.get("record_cap", 1000),
               audit_every=p.get("audit_every", 1), v_th_ref=v_th)
    traj.to_event_csv(artifact_path(out_dir, "events.csv"))
    final = traj.config
    rows = [[i] + list(final.positions[i]) + list(final.velocities[i])
            for i in range(model.n)]
    write_csv(artifact_path(out_dir, "final_state.csv"),
              ["i", "x", "y", "z", "vx", "vy", "vz"], rows)
    artifacts = ["events.csv", "final_state.csv"]
    report = {
        "t_final": traj.t_final, "n_pair": traj.n_pair,
        "n_wall": traj.n_wall, "audits": traj.audits,
    }
    if snapshots:
        obs = measure(traj, MeasureSpec(windows=p.get("windows", 10)))
        obs.tabulated.to_csv(artifact_path(out_dir, "histogram.csv"))
        artifacts.append("histogram.csv")
        enskog = enskog_frequency_prediction(model, T=obs.temperature)
        shell_pred, shell_err, _ = near_contact_pair_prediction(model)
        report["measurement"] = {
            "temperature": obs.temperature,
            "axis_second_moments": list(obs.axis_second_moments),
            "speed4_ratio": obs.speed4_ratio,
            "pair_rate_per_particle": obs.pair_rate_per_particle,
            "wall_rate_per_particle": obs.wall_rate_per_particle,
            "enskog_prediction": enskog,
            "wall_rate_prediction": wall_rate_prediction(
                model, T=obs.temperature),
            "entropy_slope": obs.entropy_slope,
            "entropy_slope_stderr": obs.entropy_slope_stderr,
            "shell_mean": obs.shell_mean, "shell_se": obs.shell_se,
            "shell_prediction": shell_pred,
            "shell_prediction_error": shell_err,
            "underpopulated_fraction": obs.underpopulated_fraction,
            "flags": obs.flags,
        }
    return artifacts, report


def _run_bg_sweep(config, seed, out_dir, threads):
    from .bg import sweep_k1

    c, box, ns = _sequence_args(config)
    pdf = _pdf_from(config, box)
    p = config.get("k1", {})
    rep = sweep_k1(c, box, ns, pdf=pdf,
                   grid_nodes=p.get("grid_nodes", 8),
                   samples_per_node=p.get("samples_per_node", 1_000_000),
                   seed=seed)
    rows = [[r["n"], r["epsilon"], r["sigma"], r["value"], r["error"]]
            for r in rep.entries]
    write_csv(artifact_path(out_dir, "k1_sweep.csv"),
              ["n", "epsilon", "sigma", "value", "error"], rows)
    return ["k1_sweep.csv"], rep.to_dict()


def _run_noncomm(config, seed, out_dir, threads):
    from .bg import noncommutativity_report

    c, box, ns = _sequence_args(config)
    pdf = _pdf_from(config, box)
    p = config.get("k1", {})
    rep = noncommutativity_report(
        c, box, ns, pdf, grid_nodes=p.get("grid_nodes", 8),
        samples_per_node=p.get("samples_per_node", 400_000), seed=seed)
    rows = [[r["n"], r["epsilon"], r["sigma"], r["raw_value"],
             r["raw_error"], r["rescaled_value"], r["rescaled_error"],
             r["sup_abs_k1_minus_1"]] for r in rep.entries]
    write_csv(artifact_path(out_dir, "noncomm.csv"),
              ["n", "epsilon", "sigma", "raw_value", "raw_error",
               "rescaled_value", "rescaled_error", "sup_abs_k1_minus_1"],
              rows)
    return ["noncomm.csv"], rep.to_dict()


def _run_chaos(config, seed, out_dir, threads):
    from .bg import chaos_sweep

    c, box, ns = _sequence_args(config)
    pdf = _pdf_from(config, box)
    p = config.get("bg", {})
    k1p = config.get("k1", {})
    rep = chaos_sweep(c, box, ns, pdf=pdf,
                      tuple_count=p.get("tuple_count", 20),
                      samples=p.get("samples", 200_000),
                      grid_nodes=k1p.get("grid_nodes", 6),
                      samples_per_node=k1p.get("samples_per_node", 200_000),
                      oracle_samples=p.get("oracle_samples", 0), seed=seed)
    rows = [[r["n"], r["epsilon"], r["sigma"], r["value"], r["error"],
             r["sup_abs_k2_minus_1"]] for r in rep.entries]
    write_csv(artifact_path(out_dir, "chaos.csv"),
              ["n", "epsilon", "sigma", "value", "error",
               "sup_abs_k2_minus_1"], rows)
    return ["chaos.csv"], rep.to_dict()


def _run_relax(config, seed, out_dir, threads):
    from .relax import (
        VelocityLattice,
        homogeneous_relax,
        initial_from_pdf,
        l1_distance,
        moment_matched_maxwellian,
    )

    model = _model_from(config)
    pdf = _pdf_from(config, model.box)
    p = config.get("relax", {})
    lattice = VelocityLattice(v_max=p.get("v_max", 4.2),
                              nodes=p.get("grid_nodes", 32))
    f0 = initial_from_pdf(lattice, pdf)
    res = homogeneous_relax(model, f0, lattice, t_end=p.get("t_end", 1.0),
                            cfl=p.get("cfl", 0.1), dt=p.get("dt"),
                            stride=p.get("stride", 3))
    rows = [[res.times[k], res.entropy[k], res.mass[k],
             res.momentum[k][0], res.momentum[k][1], res.momentum[k][2],
             res.energy[k]] for k in range(len(res.times))]
    write_csv(artifact_path(out_dir, "relax_trace.csv"),
              ["t", "entropy", "mass", "px", "py", "pz", "energy"], rows)
    pts = lattice.points()
    frows = np.column_stack([pts, res.f.reshape(-1)])
    write_csv(artifact_path(out_dir, "final_f.csv"),
              ["vx", "vy", "vz", "f"], frows)
    target = moment_matched_maxwellian(lattice, res.f)
    report = {
        "steps": res.steps,
        "entropy_initial": float(res.entropy[0]),
        "entropy_final": float(res.entropy[-1]),
        "mass_drift_rel": float(abs(res.mass[-1] / res.mass[0] - 1.0)),
        "l1_to_moment_matched_maxwellian": l1_distance(
            lattice, res.f, target) / float(res.mass[-1]),
        "info": res.info,
    }
    return ["relax_trace.csv", "final_f.csv"], report


def _run_entropy(config, seed, out_dir, threads):
    from .pdfs import bs_entropy, scale_length

    box = _box_of(config)
    pdf = _pdf_from(config, box)
    quad = _quad_from(config)
    rep = bs_entropy(pdf, quad)
    report = {
        "entropy": rep.S,
        "quadrature_error": rep.quadrature_error,
        "zero_fraction": rep.zero_fraction,
        "normalization": pdf.normalization(quad),
    }
    if "model" in config:
        model = _model_from(config)
        sm = scale_length(pdf, 0.0, 64,
                          derive_child_seed(seed, "cli", "entropy"),
                          model=model)
        report["scale_length"] = sm.L_rho
        report["delta"] = sm.delta
    return [], report


_RUNNERS = {
    "k1": _run_k1,
    "ks": _run_ks,
    "ops": _run_ops,
    "md": _run_md,
    "bg-sweep": _run_bg_sweep,
    "noncomm": _run_noncomm,
    "chaos": _run_chaos,
    "relax": _run_relax,
    "entropy": _run_entropy,
}

_COMMAND_TO_EXPERIMENT = {cmd: cmd for cmd in EXPERIMENT_COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsgas",
        description="hard-sphere kinetic-theory experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_COMMANDS + ("validate-config",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to the JSON run config")
        p.add_argument("--out", default=None,
                       help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None,
                       help="root seed (overrides config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for shardable estimators")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = read_json(args.config)
    except (OSError, ValueError) as exc:
        print(f"error[config]: cannot read {args.config}: {exc}",
              file=sys.stderr)
        return 2
    errors = validate_config(config)
    if errors:
        for e in errors:
            print(f"schema error: {e}", file=sys.stderr)
        return 2
    if args.command == "validate-config":
        print("config is valid")
        return 0
    if config["experiment"] != args.command:
        print(f"schema error: $.experiment: config names "
              f"{config['experiment']!r} but the subcommand is "
              f"{args.command!r}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else int(config["seed"])
    threads = (args.threads if args.threads is not None
               else int(config.get("threads", 1)))
    out_dir = resolve_out_dir(args.out or config.get("output_dir", "out"))
    t0 = time.time()
    try:
        artifacts, report = _RUNNERS[args.command](config, seed, out_dir,
                                                   threads)
    except Exception as exc:
        module = type(exc).__module__
        origin = module.split(".")[-1] if module.startswith("hsgas") else \
            getattr(exc, "origin", args.command)
        print(f"error[{origin}]: {exc}", file=sys.stderr)
        return 1
    write_json(artifact_path(out_dir, "report.json"), report)
    manifest = build_manifest(config, seed=seed,
                              artifacts=artifacts + ["report.json"],
                              wall_clock_s=time.time() - t0)
    write_json(artifact_path(out_dir, "manifest.json"), manifest)
    print(f"wrote {', '.join(artifacts + ['report.json', 'manifest.json'])} "
          f"to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
