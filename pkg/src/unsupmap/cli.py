"""Command-line batch runner.

``unsupmap <command> [--config FILE] [--set section.key=value ...] [--jobs N]``

Each invocation creates ``<out_dir>/<command>-<UTC time>-<config hash>/``
holding the command's CSV/JSON outputs, the resolved configuration as
``config.ini`` and a ``manifest.json`` (configuration, its hash, seed, library
versions, wall time, exit code).  Passing a manifest as ``--config`` replays
the recorded configuration.

Exit codes: 0 success, 1 contract error or failed verification, 2 no
feasible epoch or depth, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from unsupmap import __version__
from unsupmap.bounds import select_epoch, verification_suite, write_json, write_reports_csv
from unsupmap.config import config_hash, dump_ini, load_config, train_config
from unsupmap.distill import find_minimal_complexity
from unsupmap.domains import REGISTRY, ambiguity_demo, get_pair
from unsupmap.evalstats import write_ledger_csv, write_scatter_csv
from unsupmap.exceptions import ContractError, NoFeasibleEpochError, NoMinimalDepthError
from unsupmap.experiments import (
    bound_correlation,
    depth_sweep,
    distill_study,
    distill_summary,
    per_sample_study,
    simplicity_check,
    sweep_table,
    write_distill_runs_csv,
    write_probes_csv,
    write_sweep_csv,
    write_sweep_runs_csv,
)
from unsupmap.hyperband import ModelStore, SearchSpace, hyperband_search, write_search_report
from unsupmap.nncore import Architecture
from unsupmap.nonunique import alg5_train

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- commands


def cmd_demo_ambiguity(config: dict, out: Path) -> int:
    sec = config["demo-ambiguity"]
    result = ambiguity_demo(get_pair(sec["pair"]), sec["n"], config["run"]["seed"])
    result["pair"] = sec["pair"]
    write_json(out / "ambiguity.json", result)
    return EXIT_OK


def cmd_depth_sweep(config: dict, out: Path) -> int:
    sec = config["depth-sweep"]
    cfg = train_config(config, "depth-sweep")
    runs = depth_sweep(config["run"]["pair"], sec["depths"], sec["seeds"], cfg, sec["width"], config["run"]["jobs"])
    table = sweep_table(runs)
    write_sweep_csv(out / "depth_sweep.csv", table)
    write_sweep_runs_csv(out / "depth_sweep_runs.csv", runs)
    write_json(out / "summary.json", simplicity_check(table, cfg.epsilon0))
    return EXIT_OK


def cmd_stop_criterion(config: dict, out: Path) -> int:
    sec = config["stop-criterion"]
    cfg = train_config(config, "stop-criterion")
    study = bound_correlation(config["run"]["pair"], sec["depth"], sec["seeds"], cfg, sec["width"], sec["n_perms"], config["run"]["jobs"])
    write_reports_csv(out / "reports.csv", study.reports, ["seed", "loss_gen", "loss_critic"])
    summary = {"feasible_checkpoints": len(study.feasible), "selected": {}}
    for seed in sec["seeds"]:
        mine = [rep for rep in study.reports if rep.signals["seed"] == seed]
        try:
            chosen = select_epoch(mine)
            summary["selected"][str(seed)] = {"epoch": chosen.epoch, "bound": chosen.bound_value, "gt_risk": chosen.gt_risk}
        except NoFeasibleEpochError:
            summary["selected"][str(seed)] = None
    if study.ledger:
        write_ledger_csv(out / "ledger.csv", study.ledger)
        write_scatter_csv(out / "scatter.csv", [r.bound_value for r in study.feasible], [r.gt_risk for r in study.feasible])
        summary["ledger"] = [row.__dict__ for row in study.ledger]
    write_json(out / "summary.json", summary)
    if not study.feasible:
        raise NoFeasibleEpochError("no feasible checkpoint in any run", study.reports)
    return EXIT_OK


def cmd_per_sample(config: dict, out: Path) -> int:
    sec = config["per-sample"]
    h1_cfg = train_config(config, "per-sample")
    probe_cfg = train_config(config, None, epochs=sec["probe_epochs"], lam=sec["probe_lam"])
    study = per_sample_study(sec["pair"], sec["depth"], h1_cfg, probe_cfg, sec["n_points"], sec["point_seed"], sec["width"], config["run"]["jobs"])
    write_probes_csv(out / "probes.csv", study.probes)
    write_scatter_csv(out / "scatter.csv", [p.bound for p in study.probes], [p.true_loss for p in study.probes])
    write_json(
        out / "summary.json",
        {"h1_div": study.h1_div, "h1_gt_risk": study.h1_gt, "r": study.r, "r_squared": study.r2, "p": study.p(sec["n_perms"], h1_cfg.seed)},
    )
    return EXIT_OK


def cmd_hyperband(config: dict, out: Path) -> int:
    sec = config["hyperband"]
    base = train_config(config, "hyperband")
    space = SearchSpace(sec["depths"], sec["widths"], sec["batch_sizes"], sec["learning_rates"])
    store = ModelStore(sec["store_dir"] or out / "store", base.seed)
    pair = get_pair(config["run"]["pair"])
    result = hyperband_search(space, sec["max_resource"], sec["eta"], pair, sec["lam"], base.seed, store, base)
    write_search_report(out / "hyperband.csv", result.ranking)
    best = result.best
    write_json(out / "summary.json", {"best": best.omega.key, "loss": best.loss, "final_T": best.resource, "gt_risk": best.gt_risk, "evaluations": len(result.history)})
    return EXIT_OK


def cmd_distill(config: dict, out: Path) -> int:
    sec = config["distill"]
    cfg = train_config(config, "distill")
    k1 = sec["k1"]
    if sec["find_k1"]:
        k1 = find_minimal_complexity(get_pair(sec["pair"]), range(1, sec["max_depth"] + 1), cfg, sec["width"])
    runs = distill_study(sec["pair"], k1, sec["k2"], sec["seeds"], cfg, sec["width"], config["run"]["jobs"])
    first = runs[0]
    write_json(
        out / "distill.json",
        {
            "k1": k1,
            "k2": sec["k2"],
            "lambda": cfg.lam,
            "div_g": first.div_g,
            "div_h": first.div_h,
            "risk_h_g": first.risk_h_g,
            "gt_risk_g": first.gt_risk_g,
            "gt_risk_h": first.gt_risk_h,
        },
    )
    write_distill_runs_csv(out / "distill_runs.csv", runs)
    write_json(out / "summary.json", distill_summary(runs))
    return EXIT_OK


def cmd_nonunique(config: dict, out: Path) -> int:
    sec = config["nonunique"]
    cfg = train_config(config, "nonunique")
    pair = get_pair(sec["pair"])
    arch = Architecture.mlp(pair.dim_a, pair.dim_b, sec["depth"], sec["width"])
    try:
        result = alg5_train(pair, arch, sec["encoder_layers"], cfg)
    except NoFeasibleEpochError as exc:
        write_reports_csv(out / "reports.csv", exc.reports, ["min_target_risk"])
        raise
    write_reports_csv(out / "reports.csv", result.reports, ["min_target_risk"])
    write_json(out / "summary.json", {"selected_epoch": result.selected.epoch, "bound": result.selected.bound_value, "min_target_risk": result.selected.signals["min_target_risk"]})
    return EXIT_OK


def cmd_verify(config: dict, out: Path) -> int:
    sec = config["verify"]
    eps0 = config["train"]["epsilon0"]
    pairs = [get_pair(name) for name in REGISTRY]
    result = verification_suite(pairs, eps0, sec["ipm_trials"], sec["lipschitz_trials"], sec["probe_points"], config["run"]["seed"])
    demos = {}
    for pair in pairs:
        if pair.symmetry is None:
            continue
        demo = ambiguity_demo(pair, 512, config["run"]["seed"])
        demo["passed"] = (
            demo["circularity_losses"]["cycle_a"] == 0.0
            and demo["circularity_losses"]["cycle_b"] == 0.0
            and demo["divergence_of_wrong_map"] < 0.1
            and demo["gt_risk_of_wrong_map"] >= 1.0
        )
        demos[pair.name] = demo
    result["ambiguity"] = demos
    result["passed"] = bool(result["passed"] and all(d["passed"] for d in demos.values()))
    write_json(out / "verify.json", result)
    return EXIT_OK if result["passed"] else EXIT_CONTRACT


COMMANDS = {
    "demo-ambiguity": cmd_demo_ambiguity,
    "depth-sweep": cmd_depth_sweep,
    "stop-criterion": cmd_stop_criterion,
    "per-sample": cmd_per_sample,
    "hyperband": cmd_hyperband,
    "distill": cmd_distill,
    "nonunique": cmd_nonunique,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------- plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unsupmap", description="Unsupervised cross-domain mapping experiments.")
    parser.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("--config", help="INI configuration file or a manifest.json to replay")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    parser.add_argument("--jobs", type=int, help="worker processes for independent runs")
    parser.add_argument("--out-dir", help="parent directory of the run directory")
    parser.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    return parser


def _versions() -> dict:
    return {"unsupmap": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def make_run_dir(parent: Path, command: str, digest: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = parent / f"{command}-{stamp}-{digest[:8]}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def run(command: str, config_path=None, overrides=(), jobs=None, out_dir=None, seed=None) -> tuple[int, Path | None]:
    """Execute one command; returns ``(exit code, run directory)``."""
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    overrides = list(overrides)
    if jobs is not None:
        overrides.append(f"run.jobs={jobs}")
    if out_dir is not None:
        overrides.append(f"run.out_dir={out_dir}")
    if seed is not None:
        overrides.append(f"run.seed={seed}")
    try:
        config = load_config(config_path, overrides)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    digest = config_hash(config)
    out = make_run_dir(Path(config["run"]["out_dir"]), command, digest)
    (out / "config.ini").write_text(dump_ini(config), encoding="utf-8")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    start = time.perf_counter()
    status, error = EXIT_OK, None
    try:
        status = COMMANDS[command](config, out)
    except (NoFeasibleEpochError, NoMinimalDepthError) as exc:
        status, error = EXIT_INFEASIBLE, str(exc)
        if isinstance(exc, NoMinimalDepthError):
            write_json(out / "depth_table.json", {str(k): v for k, v in exc.table.items()})
    except ContractError as exc:
        status, error = EXIT_CONTRACT, str(exc)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": digest,
        "seed": config["run"]["seed"],
        "versions": _versions(),
        "started_utc": started,
        "wall_time_s": time.perf_counter() - start,
        "exit_code": status,
        "error": error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return status, out


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        status, out = run(args.command, args.config, args.overrides, args.jobs, args.out_dir, args.seed)
    except UsageError as exc:
        print(f"unsupmap: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(out)
    return status


if __name__ == "__main__":
    sys.exit(main())
