"""Command-line front end: experiment recipes and their artifacts.

Recipes
-------
``ladder``       deterministic warm-start ladder, one run per seed
``synth``        robust synthesis over the configured parameter intervals
``compare``      Legendre designs against matched-size sampling designs
``verify``       signed-model robustness grid for stored pulses
``filtersweep``  Butterworth bandwidth sweep for stored (or fresh) pulses

Each run writes pulse files, ``report.json``, CSV tables and PNG figures
into the output directory and prints a summary table.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bragg, io, plotting, synth
from .ensemble import Mode

logger = logging.getLogger("robustbragg")

RECIPES = ("ladder", "synth", "compare", "verify", "filtersweep")
_RECIPE_ALIASES = {"robust": "synth"}
DEFAULT_OMEGA_R_HZ = 7.66e3


@dataclass
class ExperimentConfig:
    recipe: str
    bragg: bragg.BraggConfig
    solver: synth.SolverConfig
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("results")
    threads: int = 1
    grid_shape: tuple[int, int] = (9, 9)
    compare_degrees: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    compare_samples: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    pulses: list[Path] = field(default_factory=list)
    filter_order: int = 4
    omega_r_hz: float = DEFAULT_OMEGA_R_HZ

    def fingerprint(self) -> str:
        """Hash of everything that determines results (not paths or threads)."""
        return io.fingerprint({
            "recipe": self.recipe,
            "bragg": self.bragg,
            "solver": self.solver,
            "seeds": self.seeds,
            "grid_shape": self.grid_shape,
            "compare_degrees": self.compare_degrees,
            "compare_samples": self.compare_samples,
            "filter_order": self.filter_order,
        })


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _section_problems(cls, values, label):
    if values is None:
        return []
    if not isinstance(values, dict):
        return [f"{label} section must be a mapping"]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        return [f"unknown {label} field(s): {', '.join(unknown)}"]
    try:
        cls(**values)
    except (ValueError, TypeError) as exc:
        return [p.strip() for p in str(exc).split(";")]
    return []


def validate_config(raw: dict) -> list[str]:
    """All problems with a raw (parsed) configuration; empty means valid."""
    out = []
    if not isinstance(raw, dict):
        return ["configuration must be a mapping"]
    recipe = _RECIPE_ALIASES.get(raw.get("recipe", "synth"), raw.get("recipe", "synth"))
    if recipe not in RECIPES:
        out.append(f"unknown recipe {recipe!r}; expected one of {', '.join(RECIPES)}")
    out += _section_problems(bragg.BraggConfig, raw.get("bragg"), "bragg")
    out += _section_problems(synth.SolverConfig, raw.get("solver"), "solver")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        out.append("seeds must be a nonempty list of integers")
    threads = raw.get("threads", 1)
    if threads != "auto" and not (isinstance(threads, int) and threads >= 1):
        out.append("threads must be a positive integer or 'auto'")
    shape = raw.get("grid_shape", [9, 9])
    if not (isinstance(shape, (list, tuple)) and len(shape) == 2 and all(isinstance(s, int) and s >= 1 for s in shape)):
        out.append("grid_shape must be two positive integers")
    compare = raw.get("compare", {}) or {}
    for key, least in (("degrees", 0), ("samples", 1)):
        vals = compare.get(key, [least + 1])
        if not isinstance(vals, list) or not vals or not all(isinstance(v, int) and v >= least for v in vals):
            out.append(f"compare.{key} must be a nonempty list of integers >= {least}")
    if recipe == "verify" and not raw.get("pulses"):
        out.append("verify needs at least one pulse file")
    order = raw.get("filter_order", 4)
    if not (isinstance(order, int) and 1 <= order <= 12):
        out.append("filter_order must be an integer in 1..12")
    omega = raw.get("omega_r_hz", DEFAULT_OMEGA_R_HZ)
    if not (isinstance(omega, (int, float)) and omega > 0):
        out.append("omega_r_hz must be positive")
    return out


def build_experiment(raw: dict) -> ExperimentConfig:
    problems = validate_config(raw)
    if problems:
        raise ValueError("; ".join(problems))
    recipe = _RECIPE_ALIASES.get(raw.get("recipe", "synth"), raw.get("recipe", "synth"))
    threads = raw.get("threads", 1)
    if threads == "auto":
        threads = os.cpu_count() or 1
    compare = raw.get("compare", {}) or {}
    return ExperimentConfig(
        recipe=recipe,
        bragg=bragg.BraggConfig(**(raw.get("bragg") or {})),
        solver=synth.SolverConfig(**(raw.get("solver") or {})),
        seeds=list(raw.get("seeds", [0])),
        output_dir=Path(raw.get("out", "results")),
        threads=int(threads),
        grid_shape=tuple(raw.get("grid_shape", (9, 9))),
        compare_degrees=list(compare.get("degrees", [1, 2, 3, 4])),
        compare_samples=list(compare.get("samples", [2, 3, 4, 5])),
        pulses=[Path(p) for p in raw.get("pulses", [])],
        filter_order=int(raw.get("filter_order", 4)),
        omega_r_hz=float(raw.get("omega_r_hz", DEFAULT_OMEGA_R_HZ)),
    )


def _int_pair(text):
    parts = [int(p) for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustbragg", description="Robust Bragg beamsplitter pulse design.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="recipe", required=True)
    for name in RECIPES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML configuration file")
        p.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", help="worker processes, or 'auto'")
        p.add_argument("--degrees", type=_int_pair, help="d1,d2 (compare: list of degrees)")
        p.add_argument("--samples", type=_int_pair, help="s1,s2 (compare: list of sample counts)")
        p.add_argument("--n0", type=int, help="target index (target |±2 n0 ħk⟩)")
        p.add_argument("--bound", type=float, help="pulse amplitude bound in units of ω_r")
        p.add_argument("--pulse", type=Path, nargs="+", help="pulse file(s) for verify/filtersweep")
    return parser


def raw_config(args) -> dict:
    """Config file contents with command-line flags applied on top."""
    raw = {}
    if args.config is not None:
        loaded = yaml.safe_load(Path(args.config).read_text())
        raw = loaded if isinstance(loaded, dict) else {}
    raw["recipe"] = args.recipe
    b = dict(raw.get("bragg") or {})
    if args.n0 is not None:
        b["n0"] = args.n0
    if args.bound is not None:
        b["amplitude_bound"] = args.bound
    if args.recipe == "compare":
        compare = dict(raw.get("compare") or {})
        if args.degrees:
            compare["degrees"] = args.degrees
        if args.samples:
            compare["samples"] = args.samples
        raw["compare"] = compare
    else:
        if args.degrees:
            b["degrees"] = (args.degrees * 2)[:2] if len(args.degrees) == 1 else args.degrees
            b["mode"] = "legendre"
        if args.samples:
            s = (args.samples * 2)[:2] if len(args.samples) == 1 else args.samples
            b["degrees"] = [x - 1 for x in s]
            b["mode"] = "sampling"
    if b:
        raw["bragg"] = b
    if args.seed:
        raw["seeds"] = list(args.seed)
    if args.out is not None:
        raw["out"] = str(args.out)
    if args.threads is not None:
        raw["threads"] = "auto" if args.threads == "auto" else _parse_int(args.threads)
    if args.pulse:
        raw["pulses"] = [str(p) for p in args.pulse]
    return raw


def _parse_int(text):
    try:
        return int(text)
    except ValueError:
        return text


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------


def _executor(threads):
    if threads > 1:
        return concurrent.futures.ProcessPoolExecutor(max_workers=threads)
    return None


def _map(executor, fn, items):
    return list(executor.map(fn, items)) if executor is not None else [fn(x) for x in items]


def _trace_rows(report, **keys):
    rows = []
    for i, (e, s, en) in enumerate(zip(report.error_trace, report.surrogate_trace, report.energy_trace)):
        stage = 1 if i < report.stage1_iterations else 2
        rows.append([*keys.values(), i, stage, e, s, en])
    return rows


TRACE_HEADER = ["iteration", "stage", "error", "surrogate", "energy"]
GRID_HEADER = ["k_over_k0", "gamma", "error"]
SUMMARY_FIELDS = ["mean_error", "max_error", "min_error", "max_u", "mean_u", "max_du", "mean_du", "clock_minutes"]
TABLE_LABELS = {
    "mean_error": "mean Error",
    "max_error": "max Error",
    "max_u": "max u/ω_r",
    "mean_u": "mean u/ω_r",
    "max_du": "max |Δu|/ω_r",
    "mean_du": "mean |Δu|/ω_r",
    "clock_minutes": "Clock (min)",
}


def _run_ladder_seed(job):
    bcfg, scfg, seed = job
    return seed, synth.momentum_ladder(
        bcfg.replace(n0=1), bcfg.n0, dataclasses.replace(scfg, seed=seed)
    )


def _run_design(job):
    """Cold-start synthesis for one (config, seed); returns (report, clock minutes)."""
    bcfg, scfg, seed = job
    scfg = dataclasses.replace(scfg, seed=seed)
    model = bragg.build_design_model(bcfg)
    lower, upper = bragg.bounds_for(bcfg)
    pulse0 = synth.random_initial_pulse(bcfg.grid, lower, upper, seed)
    t0 = time.perf_counter()
    report = synth.synthesize(
        model, bragg.initial_state(bcfg, model), bragg.target_state(bcfg, model), pulse0, scfg
    )
    report.n0, report.seed = bcfg.n0, seed
    return report, (time.perf_counter() - t0) / 60.0


def _print_table(title, columns, rows):
    print(title)
    width = max(len(r[0]) for r in rows) + 2
    print(" " * width + "".join(f"{c:>12}" for c in columns))
    for label, *vals in rows:
        print(f"{label:<{width}}" + "".join(f"{v:>12.4g}" for v in vals))


def recipe_ladder(cfg: ExperimentConfig, executor) -> dict:
    out = cfg.output_dir
    jobs = [(cfg.bragg, cfg.solver, s) for s in cfg.seeds]
    results = _map(executor, _run_ladder_seed, jobs)
    trace_rows, per_rung = [], {}
    traces = {}
    seeds_report = []
    for seed, reports in results:
        for r in reports:
            fp = io.fingerprint({"bragg": cfg.bragg.replace(n0=r.n0), "solver": cfg.solver, "seed": seed})
            io.write_pulse(out / "pulses" / f"ladder_seed{seed}_n0_{r.n0}.pulse", r.final_pulse, fp, r.n0)
            trace_rows += _trace_rows(r, seed=seed, n0=r.n0)
            traces.setdefault(r.n0, []).append(r.error_trace[: r.stage1_iterations])
            v = r.final_pulse.values[:, 0]
            per_rung.setdefault(r.n0, []).append((v.max(), v.sum() * r.final_pulse.grid.dt, r.final_pulse.energy, r.converged))
            seeds_report.append({
                "seed": seed, "n0": r.n0, "converged": r.converged, "stage1_error": r.stage1_error,
                "final_error": r.final_error, "iterations": r.iterations_used,
                "stage2_error_drift": r.stage2_error_drift, "wall_clock_seconds": r.wall_clock_seconds,
                "max_u": float(v.max()),
            })
        if len(reports) < cfg.bragg.n0 or not reports[-1].converged:
            logger.warning("seed %d: ladder stopped at n0=%d", seed, reports[-1].n0 if reports else 0)
    io.write_csv(out / "traces.csv", ["seed", "n0", *TRACE_HEADER], trace_rows)
    energy_rows = []
    for n0 in sorted(per_rung):
        a = np.array(per_rung[n0], dtype=float)
        energy_rows.append([n0, a[:, 0].mean(), a[:, 0].var(), a[:, 1].mean(), a[:, 1].var(),
                            a[:, 2].mean(), a[:, 2].var(), int(a[:, 3].sum()), len(a)])
    io.write_csv(out / "energy.csv", ["n0", "max_u_mean", "max_u_var", "area_mean", "area_var",
                                      "energy_mean", "energy_var", "converged", "runs"], energy_rows)
    if traces:
        plotting.convergence_traces(traces, out / "convergence.png", cfg.solver.error_tolerance)
        e = np.array(energy_rows, dtype=float)
        plotting.energy_bars(e[:, 0].astype(int), e[:, 1], np.sqrt(e[:, 2]), e[:, 3], np.sqrt(e[:, 4]), out / "energy.png")
    _print_table(
        "ladder summary (per target, mean over seeds)",
        ["converged", "runs", "max u/ω_r", "∫u dt"],
        [(f"|±{2 * int(r[0])}ħk⟩", r[7], r[8], r[1], r[3]) for r in energy_rows],
    )
    return {"runs": seeds_report}


def recipe_synth(cfg: ExperimentConfig, executor) -> dict:
    out = cfg.output_dir
    jobs = [(cfg.bragg, cfg.solver, s) for s in cfg.seeds]
    results = _map(executor, _run_design, jobs)
    trace_rows, grid_rows, summary_rows, runs = [], [], [], []
    fp = io.fingerprint({"bragg": cfg.bragg, "solver": cfg.solver})
    for (report, minutes), seed in zip(results, cfg.seeds):
        io.write_pulse(out / "pulses" / f"robust_seed{seed}.pulse", report.final_pulse, fp, cfg.bragg.n0)
        grid = bragg.robustness_grid(report.final_pulse, cfg.bragg, cfg.grid_shape, executor, minutes)
        trace_rows += _trace_rows(report, seed=seed)
        grid_rows += [[seed, d, g, e] for (d, g), e in zip(grid.grid, grid.terminal_errors)]
        s = grid.summary()
        summary_rows.append([seed] + [s[k] for k in SUMMARY_FIELDS])
        plotting.grid_heatmap(grid, out / f"grid_seed{seed}.png", f"seed {seed}")
        plotting.pulse_plot(report.final_pulse, out / f"pulse_seed{seed}.png", f"seed {seed}")
        runs.append({"seed": seed, "design_error": report.final_error, "converged": report.converged,
                     "iterations": report.iterations_used, **s})
    io.write_csv(out / "traces.csv", ["seed", *TRACE_HEADER], trace_rows)
    io.write_csv(out / "grid.csv", ["seed", *GRID_HEADER], grid_rows)
    io.write_csv(out / "summary.csv", ["seed", *SUMMARY_FIELDS], summary_rows)
    _print_table(
        f"robust design |±{2 * cfg.bragg.n0}ħk⟩, degrees {cfg.bragg.degrees} ({cfg.bragg.mode.value})",
        [f"seed {s}" for s in cfg.seeds],
        [(TABLE_LABELS[k], *[row[1 + SUMMARY_FIELDS.index(k)] for row in summary_rows]) for k in TABLE_LABELS],
    )
    return {"runs": runs}


def recipe_compare(cfg: ExperimentConfig, executor) -> dict:
    out = cfg.output_dir
    seed = cfg.seeds[0]
    designs = []
    for d, s in zip(cfg.compare_degrees, cfg.compare_samples):
        designs.append(("legendre", d, cfg.bragg.replace(degrees=(d, d), mode=Mode.LEGENDRE)))
        designs.append(("sampling", s, cfg.bragg.replace(degrees=(s - 1, s - 1), mode=Mode.SAMPLING)))
    results = _map(executor, _run_design, [(b, cfg.solver, seed) for _, _, b in designs])
    rows, runs = [], []
    for (method, size, bcfg), (report, minutes) in zip(designs, results):
        fp = io.fingerprint({"bragg": bcfg, "solver": cfg.solver, "seed": seed})
        io.write_pulse(out / "pulses" / f"{method}_{size}.pulse", report.final_pulse, fp, bcfg.n0)
        grid = bragg.robustness_grid(report.final_pulse, bcfg, cfg.grid_shape, executor, minutes)
        s = grid.summary()
        rows.append([method, size] + [s[k] for k in SUMMARY_FIELDS])
        runs.append({"method": method, "size": size, "design_error": report.final_error, **s})
    io.write_csv(out / "summary.csv", ["method", "size", *SUMMARY_FIELDS], rows)
    leg = [r for r in rows if r[0] == "legendre"]
    smp = [r for r in rows if r[0] == "sampling"]
    plotting.comparison_bars(
        [f"{a[1]} / {b[1]}" for a, b in zip(leg, smp)],
        [r[2] for r in leg], [r[2] for r in smp], out / "compare.png",
    )
    for method, group in (("Legendre expansion (degree)", leg), ("equidistant sampling (samples)", smp)):
        _print_table(
            f"|±{2 * cfg.bragg.n0}ħk⟩, {method}",
            [str(r[1]) for r in group],
            [(TABLE_LABELS[k], *[r[2 + SUMMARY_FIELDS.index(k)] for r in group]) for k in TABLE_LABELS],
        )
    wins = sum(a[2] < b[2] for a, b in zip(leg, smp))
    return {"runs": runs, "legendre_wins": wins, "pairs": len(leg)}


def recipe_verify(cfg: ExperimentConfig, executor) -> dict:
    out = cfg.output_dir
    grid_rows, summary_rows, runs = [], [], []
    for path in cfg.pulses:
        pulse, header = io.read_pulse(path)
        bcfg = cfg.bragg.replace(n0=header.get("n0", cfg.bragg.n0))
        t0 = time.perf_counter()
        grid = bragg.robustness_grid(pulse, bcfg, cfg.grid_shape, executor)
        grid.clock_minutes = (time.perf_counter() - t0) / 60.0
        s = grid.summary()
        name = Path(path).stem
        grid_rows += [[name, d, g, e] for (d, g), e in zip(grid.grid, grid.terminal_errors)]
        summary_rows.append([name, bcfg.n0] + [s[k] for k in SUMMARY_FIELDS])
        plotting.grid_heatmap(grid, out / f"grid_{name}.png", name)
        runs.append({"pulse": str(path), "n0": bcfg.n0, **s})
    io.write_csv(out / "grid.csv", ["pulse", *GRID_HEADER], grid_rows)
    io.write_csv(out / "summary.csv", ["pulse", "n0", *SUMMARY_FIELDS], summary_rows)
    _print_table(
        "verification grid",
        [r[0][:11] for r in summary_rows],
        [(TABLE_LABELS[k], *[r[2 + SUMMARY_FIELDS.index(k)] for r in summary_rows]) for k in TABLE_LABELS],
    )
    return {"runs": runs}


def _sweep_job(job):
    pulse, n0, N, order = job
    return bragg.filter_sweep(pulse, n0, N, order)


def recipe_filtersweep(cfg: ExperimentConfig, executor) -> dict:
    out = cfg.output_dir
    items = []
    if cfg.pulses:
        for path in cfg.pulses:
            pulse, header = io.read_pulse(path)
            items.append((Path(path).stem, pulse, int(header.get("n0", cfg.bragg.n0))))
    else:
        seed = cfg.seeds[0]
        _, reports = _run_ladder_seed((cfg.bragg, cfg.solver, seed))
        for r in reports:
            io.write_pulse(out / "pulses" / f"ladder_seed{seed}_n0_{r.n0}.pulse", r.final_pulse, "", r.n0)
            if r.converged:
                items.append((f"n0_{r.n0}", r.final_pulse, r.n0))
    jobs = [(p, n0, cfg.bragg.replace(n0=n0).truncation, cfg.filter_order) for _, p, n0 in items]
    sweeps = _map(executor, _sweep_job, jobs)
    rows, curves, runs = [], {}, []
    for (name, pulse, n0), sw in zip(items, sweeps):
        fs_hz = bragg.physical_frequency(cfg.bragg, cfg.omega_r_hz)
        rows += [[name, n0, c, c * fs_hz, p] for c, p in zip(sw.cutoffs, sw.probabilities)]
        curves[f"|±{2 * n0}ħk⟩"] = (sw.cutoffs, sw.probabilities)
        runs.append({
            "pulse": name, "n0": n0, "unfiltered_probability": sw.unfiltered_probability,
            "smallest_cutoff_probability": float(sw.probabilities[0]) if len(sw.probabilities) else None,
            "nyquist_probability": float(sw.probabilities[-1]) if len(sw.probabilities) else None,
            "cutoff_reaching_0.9": sw.first_cutoff_reaching(0.9), "skipped_filters": sw.skipped,
        })
    io.write_csv(out / "filter.csv", ["pulse", "n0", "cutoff_over_fs", "cutoff_hz", "probability"], rows)
    if curves:
        plotting.filter_curves(curves, out / "filter.png")
    _print_table(
        f"filter sweep (order {cfg.filter_order}, f_s = {bragg.physical_frequency(cfg.bragg, cfg.omega_r_hz):.4g} Hz)",
        [r["pulse"][:11] for r in runs],
        [
            ("unfiltered", *[r["unfiltered_probability"] for r in runs]),
            ("lowest cut", *[r["smallest_cutoff_probability"] for r in runs]),
            ("Nyquist", *[r["nyquist_probability"] for r in runs]),
            ("f_c(0.9)/f_s", *[r["cutoff_reaching_0.9"] for r in runs]),
        ],
    )
    return {"runs": runs}


_RECIPE_FUNCS = {
    "ladder": recipe_ladder,
    "synth": recipe_synth,
    "compare": recipe_compare,
    "verify": recipe_verify,
    "filtersweep": recipe_filtersweep,
}


def run_recipe(cfg: ExperimentConfig) -> int:
    """Run one experiment; returns the process exit status."""
    out = cfg.output_dir
    try:
        (out / "pulses").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logger.error("cannot create output directory %s: %s", out, exc)
        return 1
    t0 = time.perf_counter()
    executor = _executor(cfg.threads)
    try:
        result = _RECIPE_FUNCS[cfg.recipe](cfg, executor)
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return 1
    finally:
        if executor is not None:
            executor.shutdown()
    io.write_json(out / "report.json", {
        "recipe": cfg.recipe,
        "fingerprint": cfg.fingerprint(),
        "config": {"bragg": cfg.bragg, "solver": cfg.solver, "seeds": cfg.seeds,
                   "grid_shape": cfg.grid_shape, "filter_order": cfg.filter_order,
                   "compare_degrees": cfg.compare_degrees, "compare_samples": cfg.compare_samples},
        "wall_clock_minutes": (time.perf_counter() - t0) / 60.0,
        **result,
    })
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        raw = raw_config(args)
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    problems = validate_config(raw)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    return run_recipe(build_experiment(raw))


if __name__ == "__main__":
    sys.exit(main())
