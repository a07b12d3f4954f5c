"""Batch experiment runner.

    bochner --config experiment.yaml [--task compare] [--out DIR] [--seed N]
            [--threads N] [--override key=value ...]

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures.  Every run writes ``manifest.json`` into the output directory, also
when it fails (then with ``"status": "FAILED"`` and the failing stage).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .analysis import agmon_profile, fit_expansion, weyl_prediction
from .config import ExperimentConfig
from .eigensolve import counting_function, eigenpairs_below
from .errors import BochnerError, ConfigInvalid
from .geometry import check_grid_rule, intensity_field, locate_wells, point_descriptor
from .pipeline import ground_state, max_intensity_bound, refined_spec, run_comparison, torus_operator

log = logging.getLogger("bochner")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class Writer:
    """Single owner of the output directory; records every file it writes."""

    def __init__(self, root: str):
        self.root = root
        self.files = []
        os.makedirs(root, exist_ok=True)

    def write(self, name: str, text: str):
        with open(os.path.join(self.root, name), "w", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)

    def write_json(self, name: str, data):
        self.write(name, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _spec_for(cfg: ExperimentConfig, p: int):
    spec = refined_spec(cfg.spec, p, cfg.grid_factor, cfg.grid_points)
    bad = check_grid_rule(spec.domain, max_intensity_bound(spec), p, cfg.grid_factor)
    if bad and cfg.grid_enforce:
        axis, have, need = bad[0]
        raise ConfigInvalid(
            "grid.points", f"p = {p} needs {need} nodes on axis {axis}, have {have}"
        )
    return spec


def _reference_b0(cfg: ExperimentConfig, spec) -> float:
    if cfg.centers:
        return min(point_descriptor(spec, c).b0 for c in cfg.centers)
    return min(w.b0 for w in locate_wells(intensity_field(spec), spec))


# -- per-power jobs: pure, they return file contents and a summary ---------------


def _compare_job(cfg, p):
    spec = _spec_for(cfg, p)
    b0 = _reference_b0(cfg, spec)
    eta = cfg.eta_for(b0)
    run = run_comparison(
        spec, p, eta, cfg.epsilon, cfg.half_widths, cfg.tol, cfg.seed,
        centers=cfg.centers, validate=cfg.validate_patches, b0=b0,
        start_count=cfg.start_count, max_count=cfg.max_count,
    )
    files = [(f"compare_p{p}_torus.csv", run.full.to_csv())]
    for j, loc in enumerate(run.locals, start=1):
        files.append((f"compare_p{p}_patch{j}.csv", loc.to_csv()))
    files.append((f"compare_p{p}.csv", run.report.to_csv()))
    summary = run.report.summary()
    summary["grid_points"] = list(spec.domain.grid_points)
    summary["patch_grid_points"] = [list(pt.grid_points) for pt in run.setup.patches]
    summary["wells"] = [w.summary() for w in run.setup.wells]
    return files, summary


def _agmon_job(cfg, p):
    spec = _spec_for(cfg, p)
    b0 = _reference_b0(cfg, spec)
    eta = cfg.eta_for(b0)
    gs = ground_state(spec, p, cfg.tol, cfg.seed)
    prof = agmon_profile(
        gs.eigenvectors[:, 0], intensity_field(spec), eta, cfg.alpha, cfg.epsilon, p=p, b0=b0
    )
    files = [(f"agmon_p{p}_torus.csv", gs.to_csv()), (f"agmon_p{p}_decay.csv", prof.to_csv())]
    summary = prof.summary()
    summary["grid_points"] = list(spec.domain.grid_points)
    return files, summary


def _weyl_job(cfg, p):
    spec = _spec_for(cfg, p)
    b0 = _reference_b0(cfg, spec)
    eta = cfg.eta_for(b0)
    level = (b0 + eta) * p
    spectrum = eigenpairs_below(
        torus_operator(spec, p), level, cfg.tol, seed=cfg.seed,
        start_count=cfg.start_count, max_count=cfg.max_count,
    )
    measured, saturated = counting_function(spectrum, level)
    predicted = {
        conv: weyl_prediction(spec, eta, p, conv, cfg.n_cutoff, b0=b0) for conv in ("2n+1", "n")
    }
    rel = {conv: abs(measured - v) / max(measured, 1) for conv, v in predicted.items()}
    summary = {
        "p": p,
        "b0": b0,
        "eta": eta,
        "level": level,
        "measured": measured,
        "saturated": saturated,
        "predicted": predicted,
        "relative_error": rel,
        "convention": cfg.convention,
        "best_convention": min(rel, key=rel.get),
        "grid_points": list(spec.domain.grid_points),
    }
    return [(f"weyl_p{p}_torus.csv", spectrum.to_csv())], summary


def _fit_job(cfg, p):
    spec = _spec_for(cfg, p)
    b0 = _reference_b0(cfg, spec)
    gs = ground_state(spec, p, cfg.tol, cfg.seed, count=cfg.fit_state)
    summary = {
        "p": p,
        "b0": b0,
        "eigenvalue": float(gs.eigenvalues[cfg.fit_state - 1]),
        "grid_points": list(spec.domain.grid_points),
    }
    return [(f"fit_p{p}_torus.csv", gs.to_csv())], summary


JOBS = {"compare": _compare_job, "agmon": _agmon_job, "weyl": _weyl_job, "fit": _fit_job}


def _run_task(cfg, task, writer, pool, manifest):
    t0 = time.perf_counter()
    cfg = cfg.for_task(task)
    futures = [(p, pool.submit(JOBS[task], cfg, p)) for p in cfg.ladder]
    summaries = []
    # consume in ladder order so file order and content never depend on timing
    for p, fut in futures:
        files, summary = fut.result()
        for name, text in files:
            writer.write(name, text)
        summaries.append(summary)
        manifest["grids"][f"{task}:p={p}"] = summary.get("grid_points")
    if task == "weyl":
        writer.write_json("weyl.json", summaries)
    elif task == "fit":
        ladder = [(s["p"], s["eigenvalue"]) for s in summaries]
        fit = fit_expansion(ladder, cfg.fit_powers).summary()
        b0 = summaries[0]["b0"]
        fit["b0"] = b0
        fit["relative_to_b0"] = [c / b0 for c in fit["coefficients"]]
        writer.write_json("fit.json", fit)
        summaries = fit
    manifest["summary"][task] = summaries
    manifest["timings"][task] = round(time.perf_counter() - t0, 3)


def run_experiment(cfg: ExperimentConfig, out_dir: str = None) -> int:
    """Run every task of ``cfg``; returns the process exit status."""
    out_dir = out_dir or cfg.output
    try:
        writer = Writer(out_dir)
    except OSError as exc:
        log.error("output directory %s: %s", out_dir, exc)
        return EXIT_CONFIG
    manifest = {
        "version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.raw,
        "tasks": list(cfg.tasks()),
        "status": "OK",
        "grids": {},
        "timings": {},
        "summary": {},
    }
    status = EXIT_OK
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for task in cfg.tasks():
            try:
                _run_task(cfg, task, writer, pool, manifest)
            except ConfigInvalid as exc:
                status = EXIT_CONFIG
                _mark_failed(manifest, task, exc)
                break
            except (BochnerError, ArithmeticError, MemoryError, np.linalg.LinAlgError) as exc:
                status = EXIT_NUMERIC
                _mark_failed(manifest, task, exc)
                break
    manifest["timings"]["total"] = round(time.perf_counter() - t0, 3)
    manifest["files"] = list(writer.files)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return status


def _mark_failed(manifest, task, exc):
    stage = getattr(exc, "stage", "numerics")
    log.error("task %s failed in stage %s: %s", task, stage, exc)
    manifest["status"] = "FAILED"
    manifest["failed"] = {"task": task, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, np.ndarray)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bochner", description="Run a magnetic Laplacian experiment.")
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--task", choices=("compare", "agmon", "weyl", "fit", "all"))
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="solver seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="concurrent ladder points")
    ap.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="dotted config key, e.g. solver.tol=1e-10 (repeatable)",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.override)
    for key, value in (("task", args.task), ("seed", args.seed), ("threads", args.threads)):
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = ExperimentConfig.load(args.config, overrides)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run_experiment(cfg, args.out)
    out = args.out or cfg.output
    print(f"{'ok' if status == EXIT_OK else 'FAILED'}: {os.path.join(out, 'manifest.json')}")
    return status


if __name__ == "__main__":
    sys.exit(main())
