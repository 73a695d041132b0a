"""Command-line front end: generate, fit, score, evaluate, benchmark.

Subcommands work on plain-text artifact directories (see :mod:`glad.io`) so
every step can be rerun, diffed and inspected by hand.  Exit codes: 0 on
success, 1 on usage or input errors, 2 when an optimizer hit its iteration
cap without converging, 3 on a numeric abort.

Every command is deterministic given identical inputs and seed: reruns
produce byte-identical files.  ``--seed`` overrides the seed found in a
config file; the environment variable ``GLAD_THREADS`` caps the benchmark
worker pool.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as gio
from .baselines import MixtureConfig, fit_group_lda, fit_mmsb
from .dglad_mc import DGladConfig, run_sampler
from .generator import (
    InjectionConfig,
    inject_activity_anomalies,
    inject_anomalies,
    inject_dynamic_change,
)
from .glad0_vem import Fit0Config, fit0
from .glad_vem import FitConfig, fit
from .model import ActivityDataset, DynamicDataset, GladNumericsError
from .scoring import (
    AnomalyReport,
    dynamic_change_score,
    evaluate_dynamic,
    evaluate_static,
    make_report,
    match_groups,
    rate_distance_score,
    rate_reference,
    top_fraction,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_CONVERGENCE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags, bad config, or inputs that don't match the command."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which collides with the
    # non-convergence code; route usage problems through UsageError instead.
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

_GENERATE_BASE = {
    "kind": ("str", "static"),
    "n_nodes": ("int", 500),
    "n_groups": ("int", 5),
    "n_roles": ("int", 2),
    "anomaly_fraction": ("float", 0.2),
    "normal_rate": ("float_list", (0.1, 0.9)),
    "anomalous_rate": ("float_list", (0.9, 0.1)),
    "trials_per_person": ("int", 50),
    "block_in": ("float", 0.3),
    "block_out": ("float", 0.05),
    "seed": ("int", 0),
}

_GENERATE_DYNAMIC = {
    "horizon": ("int", 5),
    "change_time": ("int", 4),
    "changed_fraction": ("float", 0.5),
    "drift_sigma": ("float", 0.05),
}


def _generate_schema(kind: str) -> dict:
    if kind == "dynamic":
        return {**_GENERATE_BASE, **_GENERATE_DYNAMIC}
    return dict(_GENERATE_BASE)


def _injection_config(cfg: dict) -> InjectionConfig:
    return InjectionConfig(
        n_nodes=cfg["n_nodes"],
        n_groups=cfg["n_groups"],
        n_roles=cfg["n_roles"],
        anomaly_fraction=cfg["anomaly_fraction"],
        normal_rate=tuple(cfg["normal_rate"]),
        anomalous_rate=tuple(cfg["anomalous_rate"]),
        trials_per_person=cfg["trials_per_person"],
        block_in=cfg["block_in"],
        block_out=cfg["block_out"],
        seed=cfg["seed"],
    )


def cmd_generate(args) -> int:
    raw = gio.parse_config_text(Path(args.config).read_text())
    kind = raw.get("kind", "static")
    if kind not in ("static", "activity", "dynamic"):
        raise UsageError(f"kind must be static, activity or dynamic, not {kind!r}")
    cfg = gio.coerce_config(raw, _generate_schema(kind))
    if args.seed is not None:
        cfg["seed"] = args.seed
    inj = _injection_config(cfg)
    if kind == "static":
        data, truth = inject_anomalies(inj)
    elif kind == "activity":
        # trials_per_person doubles as the per-person activity count here
        data, truth = inject_activity_anomalies(inj)
    else:
        data, truth = inject_dynamic_change(
            inj,
            horizon=cfg["horizon"],
            change_time=cfg["change_time"],
            changed_fraction=cfg["changed_fraction"],
            drift_sigma=cfg["drift_sigma"],
        )
    out = Path(args.out)
    gio.write_dataset(out, data, truth)
    (out / "config.txt").write_text(gio.format_config(cfg))
    print(f"wrote {kind} dataset for {data.n_nodes} nodes to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

# which hyper flags each model understands; anything else is a usage error
_FLAG_MODELS = {
    "max_iters": {"glad", "glad0"},
    "tol": {"glad", "glad0"},
    "alpha0": {"glad", "glad0", "dglad"},
    "mode": {"glad"},
    "inner_max": {"glad0"},
    "inner_tol": {"glad0"},
    "restarts": {"glad0"},
    "sweeps": {"dglad"},
    "burn_in": {"dglad"},
    "particles": {"dglad"},
    "sigma": {"dglad"},
    "init": {"dglad"},
    "init_restarts": {"dglad"},
    "init_fit_iters": {"dglad"},
}

_KIND_BY_MODEL = {"glad": "static", "glad0": "activity", "dglad": "dynamic"}
_FORMAT_HINT = {
    "static": 'kind "static": features.csv with one aggregated count row per node',
    "activity": 'kind "activity": features.csv with one one-hot row per activity',
    "dynamic": 'kind "dynamic": features_t{t}.csv per snapshot and a t-tagged edges.tsv',
}


def _dataset_kind(data) -> str:
    if isinstance(data, DynamicDataset):
        return "dynamic"
    if isinstance(data, ActivityDataset):
        return "activity"
    return "static"


def _check_model_flags(args) -> None:
    for flag, models in _FLAG_MODELS.items():
        if getattr(args, flag) is not None and args.model not in models:
            name = "--" + flag.replace("_", "-")
            raise UsageError(f"{name} does not apply to model {args.model}")


def _pick(value, default):
    return default if value is None else value


def _group_cols(m):
    return [f"g_{j}" for j in range(m)]


def _role_cols(k):
    return [f"r_{j}" for j in range(k)]


def _table(*columns) -> np.ndarray:
    """Column-wise table that keeps int columns int (object dtype)."""
    n = len(columns[0])
    arr = np.empty((n, len(columns)), dtype=object)
    for j, col in enumerate(columns):
        arr[:, j] = list(col)
    return arr


def _write_params(out: Path, params) -> None:
    gio.write_matrix_csv(out / "alpha.csv", params.alpha[None, :], _group_cols(params.alpha.size))
    gio.write_matrix_csv(out / "block.csv", params.block, _group_cols(params.block.shape[1]))
    gio.write_matrix_csv(out / "theta.csv", params.theta, _role_cols(params.theta.shape[1]))
    gio.write_matrix_csv(out / "beta.csv", params.beta, _role_cols(params.beta.shape[1]))


def _write_grouping(out: Path, grouping: np.ndarray) -> None:
    table = np.column_stack([np.arange(grouping.size), grouping]).astype(np.int64)
    gio.write_matrix_csv(out / "grouping.csv", table, ["node_id", "group"])


def cmd_fit(args) -> int:
    _check_model_flags(args)
    data = gio.read_dataset(args.data)
    kind = _dataset_kind(data)
    want = _KIND_BY_MODEL[args.model]
    if kind != want:
        article = "an" if want[0] in "aeiou" else "a"
        raise UsageError(
            f"model {args.model} expects {article} {want} dataset ({_FORMAT_HINT[want]}); "
            f"{args.data} holds a {kind} dataset"
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "model": args.model,
        "n_groups": args.groups,
        "n_roles": args.roles,
        "n_nodes": int(data.n_nodes),
        "seed": args.seed,
    }

    if args.model == "glad":
        config = FitConfig(
            max_iters=_pick(args.max_iters, 200),
            tol=_pick(args.tol, 1e-6),
            seed=args.seed,
            alpha0=_pick(args.alpha0, 0.1),
            mode=_pick(args.mode, "sequential"),
        )
        result = fit(data, args.groups, args.roles, config)
        _write_params(out, result.params)
        gio.write_matrix_csv(out / "gamma.csv", result.state.gamma, _group_cols(args.groups))
        gio.write_matrix_csv(out / "lambda.csv", result.state.lam, _group_cols(args.groups))
        gio.write_matrix_csv(out / "mu.csv", result.state.mu, _role_cols(args.roles))
        _write_grouping(out, result.state.grouping())
        trace = _table(range(result.trace.size), result.trace)
        gio.write_matrix_csv(out / "trace.csv", trace, ["iter", "elbo"])
        manifest.update(converged=bool(result.converged), n_iters=int(result.trace.size - 1))
        gio.write_json(out / "fit.json", manifest)
        return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE

    if args.model == "glad0":
        config = Fit0Config(
            max_iters=_pick(args.max_iters, 100),
            tol=_pick(args.tol, 1e-6),
            inner_max=_pick(args.inner_max, 50),
            inner_tol=_pick(args.inner_tol, 1e-6),
            seed=args.seed,
            alpha0=_pick(args.alpha0, 0.1),
            restarts=_pick(args.restarts, 1),
        )
        result = fit0(data, args.groups, args.roles, config)
        _write_params(out, result.params)
        gio.write_matrix_csv(out / "gamma.csv", result.state.gamma, _group_cols(args.groups))
        _write_grouping(out, result.state.grouping())
        trace = _table(range(result.trace.size), result.trace)
        gio.write_matrix_csv(out / "trace.csv", trace, ["iter", "elbo"])
        manifest.update(converged=bool(result.converged), n_iters=int(result.n_iters))
        gio.write_json(out / "fit.json", manifest)
        return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE

    # dglad
    config = DGladConfig(
        sweeps=_pick(args.sweeps, 200),
        burn_in=_pick(args.burn_in, 100),
        n_particles=_pick(args.particles, 100),
        sigma=_pick(args.sigma, 0.1),
        seed=args.seed,
        alpha0=_pick(args.alpha0, 0.1),
        init_fit_iters=_pick(args.init_fit_iters, 60),
        init_restarts=_pick(args.init_restarts, 3),
        init=_pick(args.init, "warm"),
    )
    result = run_sampler(data, args.groups, args.roles, config)
    horizon = result.trace.horizon
    gio.write_matrix_csv(
        out / "alpha.csv", result.params.alpha[None, :], _group_cols(args.groups)
    )
    gio.write_matrix_csv(out / "block.csv", result.params.block, _group_cols(args.groups))
    gio.write_matrix_csv(out / "beta.csv", result.params.beta, _role_cols(args.roles))
    gio.write_matrix_csv(out / "theta0.csv", result.params.theta0, _role_cols(args.roles))
    flat = result.theta_mean.reshape(horizon * args.groups, args.roles)
    idx = np.indices((horizon, args.groups)).reshape(2, -1).T
    gio.write_matrix_csv(
        out / "theta_mean.csv",
        _table(idx[:, 0], idx[:, 1], *(flat[:, j] for j in range(args.roles))),
        ["t", "group"] + _role_cols(args.roles),
    )
    gio.write_matrix_csv(out / "pi.csv", result.trace.pi, _group_cols(args.groups))
    _write_grouping(out, result.trace.grouping())
    # sweep log: RMS move of the filtered rate paths between sweeps
    moves = []
    prev = np.tile(result.params.theta0, (horizon, 1, 1))
    for s in range(result.history.shape[0]):
        moves.append(float(np.sqrt(np.mean((result.history[s] - prev) ** 2))))
        prev = result.history[s]
    gio.write_matrix_csv(
        out / "trace.csv", _table(range(len(moves)), moves), ["sweep", "theta_rms"]
    )
    manifest.update(converged=True, sweeps=config.sweeps, horizon=horizon)
    gio.write_json(out / "fit.json", manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# score / evaluate
# ---------------------------------------------------------------------------

def _load_fit(fit_dir) -> dict:
    root = Path(fit_dir)
    manifest_path = root / "fit.json"
    if not manifest_path.exists():
        raise UsageError(f"{fit_dir}: not a fit directory (missing fit.json)")
    manifest = json.loads(manifest_path.read_text())
    model = manifest["model"]
    m, k = int(manifest["n_groups"]), int(manifest["n_roles"])
    _, grouping_table = gio.read_matrix_csv(root / "grouping.csv")
    loaded = {
        "manifest": manifest,
        "grouping": grouping_table[:, 1].astype(np.int64),
    }
    if model == "dglad":
        horizon = int(manifest["horizon"])
        _, flat = gio.read_matrix_csv(root / "theta_mean.csv")
        loaded["theta_mean"] = flat[:, 2:].reshape(horizon, m, k)
    else:
        _, theta = gio.read_matrix_csv(root / "theta.csv")
        loaded["theta"] = theta
    return loaded


def _scores_from_fit(loaded) -> tuple:
    """(group_scores, change_scores) in the fit's own label space."""
    if "theta_mean" in loaded:
        change = dynamic_change_score(loaded["theta_mean"])
        return change.max(axis=0), change
    theta = loaded["theta"]
    return rate_distance_score(theta, rate_reference(theta)), None


def _align_to_truth(scores, change, grouping, truth, n_groups):
    """Re-index fitted-label scores into the true label space."""
    mapping = match_groups(grouping, truth["grouping"], n_groups)
    aligned = np.empty_like(scores)
    aligned[mapping] = scores
    aligned_change = None
    if change is not None:
        aligned_change = np.empty_like(change)
        aligned_change[:, mapping] = change
    return aligned, aligned_change


def _emit_scores(out: Path, report: AnomalyReport) -> None:
    (out / "report.json").write_text(report.to_json() + "\n")
    table = _table(range(report.group_scores.size), report.group_scores)
    gio.write_matrix_csv(out / "scores.csv", table, ["group", "score"])
    if report.change_scores is not None:
        change = report.change_scores
        gio.write_matrix_csv(
            out / "change_scores.csv",
            _table(range(1, change.shape[0] + 1), *(change[:, j] for j in range(change.shape[1]))),
            ["transition"] + _group_cols(change.shape[1]),
        )


def _prepare_report(args, want_truth: bool):
    loaded = _load_fit(args.fit)
    n_groups = int(loaded["manifest"]["n_groups"])
    scores, change = _scores_from_fit(loaded)
    truth = None
    if args.truth is not None:
        truth = gio.read_truth(args.truth)
        scores, change = _align_to_truth(
            scores, change, loaded["grouping"], truth, n_groups
        )
    elif want_truth:
        raise UsageError("evaluate requires --truth")
    report = make_report(
        scores,
        args.fraction,
        change_scores=change,
        threshold=args.threshold,
        anomalous=truth["anomalous_groups"] if truth else None,
        change_times=truth["change_times"] if truth else None,
    )
    return loaded, truth, report, scores, change


def cmd_score(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, report, _, _ = _prepare_report(args, want_truth=False)
    _emit_scores(out, report)
    flagged = ",".join(str(g) for g in report.flagged)
    print(f"flagged groups: {flagged}")
    return EXIT_OK


def _fpr_curve(scores, change, truth, n_thresholds):
    """(thresholds, fpr, recall) on a grid spanning the observed scores."""
    if change is not None:
        grid = np.linspace(0.0, float(change.max()), n_thresholds)
        curve = evaluate_dynamic(change, truth["change_times"], grid)
        return grid, curve["fpr"], curve["recall"]
    grid = np.linspace(float(scores.min()), float(scores.max()), n_thresholds)
    anomalous = truth["anomalous_groups"]
    normal = scores.size - len(anomalous)
    is_anom = np.zeros(scores.size, dtype=bool)
    is_anom[list(anomalous)] = True
    fpr = np.empty(grid.size)
    recall = np.empty(grid.size)
    for i, tau in enumerate(grid):
        flag = scores > tau
        fpr[i] = (flag & ~is_anom).sum() / normal if normal else 0.0
        recall[i] = (flag & is_anom).sum() / len(anomalous)
    return grid, fpr, recall


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, truth, report, scores, change = _prepare_report(args, want_truth=True)
    _emit_scores(out, report)
    metrics = sorted(report.metrics.items())
    lines = ["metric,value"] + [f"{k},{gio.fmt_cell(float(v))}" for k, v in metrics]
    (out / "accuracy.csv").write_text("\n".join(lines) + "\n")
    if change is not None and not truth["change_times"]:
        raise UsageError("dynamic fit but the truth file lists no change times")
    grid, fpr, recall = _fpr_curve(scores, change, truth, args.thresholds)
    gio.write_matrix_csv(
        out / "fpr_curve.csv",
        np.column_stack([grid, fpr, recall]),
        ["threshold", "fpr", "recall"],
    )
    if args.svg:
        gio.svg_line_plot(
            out / "fpr_curve.svg",
            grid,
            [fpr, recall],
            ["fpr", "recall"],
            title="detection sweep",
            xlabel="threshold",
            ylabel="rate",
        )
    for key, value in metrics:
        print(f"{key}={value:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

_BENCHMARK_SCHEMA = {
    "group_counts": ("int_list", [5]),
    "n_seeds": ("int", 3),
    "n_nodes": ("int", 250),
    "n_roles": ("int", 2),
    "trials_per_person": ("int", 50),
    "anomaly_fraction": ("float", 0.2),
    "block_in": ("float", 0.3),
    "block_out": ("float", 0.05),
    "max_iters": ("int", 120),
    "fraction": ("float", 0.2),
    "seed": ("int", 0),
    "dynamic": ("bool", True),
    "dyn_nodes": ("int", 150),
    "dyn_groups": ("int", 4),
    "dyn_seeds": ("int", 3),
    "horizon": ("int", 5),
    "change_time": ("int", 4),
    "changed_fraction": ("float", 0.5),
    "drift_sigma": ("float", 0.05),
    "sweeps": ("int", 20),
    "burn_in": ("int", 10),
    "particles": ("int", 80),
    "sigma": ("float", 0.4),
    "thresholds": ("int", 21),
    "grid_max": ("float", 4.0),
}

_METHODS = ("glad", "mmsb-lda")


def _static_cell(cfg: dict, group_count: int, method: str, seed: int) -> dict:
    """One benchmark cell: generate, fit, score, match labels, evaluate."""
    inj = InjectionConfig(
        n_nodes=cfg["n_nodes"],
        n_groups=group_count,
        n_roles=cfg["n_roles"],
        anomaly_fraction=cfg["anomaly_fraction"],
        trials_per_person=cfg["trials_per_person"],
        block_in=cfg["block_in"],
        block_out=cfg["block_out"],
        seed=seed,
    )
    data, truth = inject_anomalies(inj)
    fit_config = FitConfig(max_iters=cfg["max_iters"], seed=seed)
    if method == "glad":
        result = fit(data, group_count, cfg["n_roles"], fit_config)
        grouping = result.state.grouping()
        theta = result.params.theta
        scores = rate_distance_score(theta, rate_reference(theta))
    else:
        stage1 = fit_mmsb(data.links, group_count, fit_config)
        stage2 = fit_group_lda(
            data.features,
            stage1.grouping,
            cfg["n_roles"],
            MixtureConfig(seed=seed),
            n_groups=group_count,
        )
        grouping = stage1.grouping
        scores = stage2.scores
    flagged = top_fraction(scores, cfg["fraction"])
    mapping = match_groups(grouping, truth.group, group_count)
    flagged_true = np.sort(mapping[flagged])
    metrics = evaluate_static(flagged_true, truth.anomalous_groups, group_count)
    return {"accuracy": metrics["accuracy"]}


def _dynamic_cell(cfg: dict, seed: int) -> dict:
    """One d-GLAD sweep cell: FPR/recall on a fixed threshold grid."""
    inj = InjectionConfig(
        n_nodes=cfg["dyn_nodes"],
        n_groups=cfg["dyn_groups"],
        n_roles=cfg["n_roles"],
        trials_per_person=cfg["trials_per_person"],
        block_in=cfg["block_in"],
        block_out=cfg["block_out"],
        seed=seed,
    )
    data, truth = inject_dynamic_change(
        inj,
        horizon=cfg["horizon"],
        change_time=cfg["change_time"],
        changed_fraction=cfg["changed_fraction"],
        drift_sigma=cfg["drift_sigma"],
    )
    sampler_config = DGladConfig(
        sweeps=cfg["sweeps"],
        burn_in=cfg["burn_in"],
        n_particles=cfg["particles"],
        sigma=cfg["sigma"],
        seed=seed,
    )
    result = run_sampler(data, cfg["dyn_groups"], cfg["n_roles"], sampler_config)
    change = dynamic_change_score(result.theta_mean)
    mapping = match_groups(
        result.trace.grouping(), np.asarray(truth.group)[0], cfg["dyn_groups"]
    )
    aligned = np.empty_like(change)
    aligned[:, mapping] = change
    grid = np.linspace(0.0, cfg["grid_max"], cfg["thresholds"])
    curve = evaluate_dynamic(aligned, truth.change_times, grid)
    return {"fpr": curve["fpr"].tolist(), "recall": curve["recall"].tolist()}


def _run_cell_to_file(job) -> str:
    """Worker entry: run one cell, record its outcome as a JSON file."""
    kind, cfg, key, path = job
    try:
        payload = _static_cell(cfg, *key) if kind == "static" else _dynamic_cell(cfg, key)
        payload["status"] = "ok"
    except Exception as exc:  # per-cell failures recorded, suite continues
        payload = {"status": f"error: {type(exc).__name__}: {exc}"}
    gio.write_json(path, payload)
    return path


def _n_workers(n_jobs: int) -> int:
    cap = os.environ.get("GLAD_THREADS")
    if cap is not None:
        return max(1, min(int(cap), n_jobs))
    return max(1, min(os.cpu_count() or 1, 4, n_jobs))


def _csv_safe(text: str) -> str:
    return text.replace(",", ";").replace("\n", " ")


def cmd_benchmark(args) -> int:
    raw = gio.parse_config_text(Path(args.config).read_text())
    cfg = gio.coerce_config(raw, _BENCHMARK_SCHEMA)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(gio.format_config(cfg))

    jobs = []
    for gc in cfg["group_counts"]:
        for method in _METHODS:
            for s in range(cfg["n_seeds"]):
                seed = cfg["seed"] + s
                path = cells_dir / f"static_g{gc:03d}_{method}_s{seed:03d}.json"
                jobs.append(("static", cfg, (gc, method, seed), str(path)))
    if cfg["dynamic"]:
        for s in range(cfg["dyn_seeds"]):
            seed = cfg["seed"] + s
            path = cells_dir / f"dynamic_s{seed:03d}.json"
            jobs.append(("dynamic", cfg, seed, str(path)))

    workers = _n_workers(len(jobs))
    if workers == 1:
        for job in jobs:
            _run_cell_to_file(job)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_cell_to_file, jobs))

    # merge single-threaded, in deterministic order
    cell_rows, curves, dyn_rows = [], [], []
    for kind, _, key, path in sorted(jobs, key=lambda j: j[3]):
        payload = json.loads(Path(path).read_text())
        if kind == "static":
            gc, method, seed = key
            acc = payload.get("accuracy", float("nan"))
            cell_rows.append((gc, method, seed, acc, payload["status"]))
        else:
            dyn_rows.append((key, payload["status"]))
            if payload["status"] == "ok":
                curves.append((np.asarray(payload["fpr"]), np.asarray(payload["recall"])))

    cell_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    lines = ["group_count,method,seed,accuracy,status"]
    for gc, method, seed, acc, status in cell_rows:
        lines.append(f"{gc},{method},{seed},{gio.fmt_cell(float(acc))},{_csv_safe(status)}")
    (out / "cells.csv").write_text("\n".join(lines) + "\n")

    lines = ["group_count,method,mean_accuracy,std_accuracy,n_ok"]
    summary = {}
    for gc in sorted(cfg["group_counts"]):
        for method in _METHODS:
            accs = [
                r[3] for r in cell_rows if r[0] == gc and r[1] == method and r[4] == "ok"
            ]
            mean = float(np.mean(accs)) if accs else float("nan")
            std = float(np.std(accs)) if accs else float("nan")
            summary[(gc, method)] = mean
            lines.append(
                f"{gc},{method},{gio.fmt_cell(mean)},{gio.fmt_cell(std)},{len(accs)}"
            )
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    counts = sorted(cfg["group_counts"])
    mean_series = [
        np.array([summary[(gc, method)] for gc in counts]) for method in _METHODS
    ]
    if all(np.isfinite(y).all() for y in mean_series):
        gio.svg_line_plot(
            out / "accuracy_vs_groups.svg",
            counts,
            mean_series,
            list(_METHODS),
            title="detection accuracy by group count",
            xlabel="groups",
            ylabel="mean accuracy",
        )

    if cfg["dynamic"]:
        lines = ["seed,status"]
        for seed, status in sorted(dyn_rows):
            lines.append(f"{seed},{_csv_safe(status)}")
        (out / "dyn_cells.csv").write_text("\n".join(lines) + "\n")
        if curves:
            grid = np.linspace(0.0, cfg["grid_max"], cfg["thresholds"])
            fpr = np.mean([c[0] for c in curves], axis=0)
            recall = np.mean([c[1] for c in curves], axis=0)
            gio.write_matrix_csv(
                out / "fpr_curve.csv",
                np.column_stack([grid, fpr, recall]),
                ["threshold", "fpr", "recall"],
            )
            gio.svg_line_plot(
                out / "fpr_curve.svg",
                grid,
                [fpr, recall],
                ["fpr", "recall"],
                title="change detection sweep",
                xlabel="threshold",
                ylabel="rate",
            )

    n_failed = sum(1 for r in cell_rows if r[4] != "ok") + sum(
        1 for r in dyn_rows if r[1] != "ok"
    )
    gio.write_json(
        out / "benchmark.json",
        {"n_cells": len(jobs), "n_failed": n_failed, "seed": cfg["seed"]},
    )
    print(f"{len(jobs)} cells, {n_failed} failed; results in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="sample a benchmark dataset from a config")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a model to a dataset directory")
    p.add_argument("--model", required=True, choices=("glad", "glad0", "dglad"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="fit artifact directory to create")
    p.add_argument("--groups", required=True, type=int)
    p.add_argument("--roles", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--alpha0", type=float, default=None)
    p.add_argument("--mode", choices=("sequential", "jacobi"), default=None)
    p.add_argument("--inner-max", dest="inner_max", type=int, default=None)
    p.add_argument("--inner-tol", dest="inner_tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--sweeps", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--init", choices=("warm", "random"), default=None)
    p.add_argument("--init-restarts", dest="init_restarts", type=int, default=None)
    p.add_argument("--init-fit-iters", dest="init_fit_iters", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    for name, func, needs_truth in (
        ("score", cmd_score, False),
        ("evaluate", cmd_evaluate, True),
    ):
        p = sub.add_parser(name, help=f"{name} a fit directory")
        p.add_argument("--fit", required=True, help="fit artifact directory")
        p.add_argument("--out", required=True, help="report directory to create")
        p.add_argument("--truth", required=needs_truth, default=None)
        p.add_argument("--fraction", type=float, default=0.2)
        p.add_argument("--threshold", type=float, default=None)
        if name == "evaluate":
            p.add_argument("--thresholds", type=int, default=10)
            p.add_argument("--svg", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("benchmark", help="run an accuracy/FPR suite from a config")
    p.add_argument("--config", required=True, help="key=value suite config")
    p.add_argument("--out", required=True, help="results directory to create")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GladNumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
