"""Command-line surface: synth | train | eval | tune | report.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure. Every run
writes its fully-resolved configuration next to its outputs so artifacts are
reproducible from config + seed alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import network
from .bootstrap import BootstrapEnsemble, bootstrap_pi, load_ensemble, save_ensemble
from .data import (Dataset, NormParams, SynthConfig, load_dataset, save_dataset,
                   synth_generate)
from .errors import (ConfigError, EmptyInputError, NnpiError, NumericalError,
                     ParseError, SchemaError)
from .metrics import format_table, pairwise_distance_stats, pi_quality
from .scenarios import (DEFAULT_CONFIDENCES, METHODS, SCENARIOS, RunSettings,
                        ScenarioReport, fit_clusters, make_scenario_objective,
                        run_generalized, run_hybrid, run_personalized,
                        softening_sweep, subject_profiles, tune, SearchSpace)

TRAIN_DEFAULTS = {
    "method": "loss_s",
    "scenario": "generalized",
    "confidences": list(DEFAULT_CONFIDENCES),
    "k": 4,
    "folds": 10,
    "seed": 0,
    "jobs": 1,
    "hidden_layers": [16, 16],
    "activation": "relu",
    "learning_rate": 0.02,
    "decay": 1e-5,
    "batch_size": 150,
    "epochs": 300,
    "lam": 5.0,
    "eta_s": 35.0,
    "soften": 25.0,
    "clip_norm": 2.0,
    "ga_population": 12,
    "ga_parents": 6,
    "ga_genes_pct": 15.0,
    "ga_generations": 200,
    "eta_l": 50.0,
    "bootstrap_members": 20,
    "checkpoints": True,
}


def _json_dump(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _resolve(defaults: dict, config_path: str | None, flag_values: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text())
        for key, value in file_cfg.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            resolved[key] = value
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _settings_from(resolved: dict) -> RunSettings:
    return RunSettings(
        hidden_layers=tuple(resolved["hidden_layers"]),
        activation=resolved["activation"],
        folds=resolved["folds"],
        seed=resolved["seed"],
        jobs=resolved["jobs"],
        learning_rate=resolved["learning_rate"],
        decay=resolved["decay"],
        batch_size=resolved["batch_size"],
        epochs=resolved["epochs"],
        clip_norm=resolved["clip_norm"],
        lam=resolved["lam"],
        eta_s=resolved["eta_s"],
        soften=resolved["soften"],
        ga_population=resolved["ga_population"],
        ga_parents=resolved["ga_parents"],
        ga_genes_pct=resolved["ga_genes_pct"],
        ga_generations=resolved["ga_generations"],
        eta_l=resolved["eta_l"],
        bootstrap_members=resolved["bootstrap_members"],
    )


def cmd_synth(args) -> int:
    defaults = {"n": 2000, "d": 22, "subjects": 20, "clusters": 1,
                "noise": "homoscedastic", "sigma": 0.3, "sigma_slope": 0.0, "seed": 0}
    resolved = _resolve(defaults, args.config, {
        "n": args.n, "d": args.d, "subjects": args.subjects, "clusters": args.clusters,
        "noise": args.noise, "sigma": args.sigma, "sigma_slope": args.sigma_slope,
        "seed": args.seed,
    })
    cfg = SynthConfig(**resolved)
    ds = synth_generate(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    _json_dump(out.with_suffix(out.suffix + ".meta.json"),
               {"command": "synth", "out": str(args.out), **resolved})
    print(f"wrote {ds.n} rows x {ds.d} features to {out}")
    return 0


def _quality_meta(quality: dict) -> dict:
    return {f"{c:.6g}": {"picp": q.picp, "mpiw": q.mpiw, "nmpiw": q.nmpiw,
                         "crossing_rate": q.crossing_rate}
            for c, q in quality.items()}


def _write_artifacts(outdir: Path, artifacts, target_range: float,
                     write_checkpoints: bool) -> None:
    hist_rows = []
    ckpt_dir = outdir / "checkpoints"
    if write_checkpoints:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    for art in artifacts:
        meta = {
            "scenario": art.scenario,
            "method": art.method,
            "fold": art.fold,
            "group": art.group,
            "confidence": art.confidence,
            "test_indices": [int(i) for i in art.test_idx],
            "norm_min": [float(v) for v in art.norm.col_min],
            "norm_max": [float(v) for v in art.norm.col_max],
            "target_range": target_range,
            "quality": _quality_meta(art.quality),
        }
        if write_checkpoints:
            if isinstance(art.params, BootstrapEnsemble):
                name = f"ensemble_f{art.fold:02d}_{art.group}.json"
                save_ensemble(ckpt_dir / name, art.params, meta)
            else:
                tag = int(round(art.confidence * 100))
                name = f"ckpt_c{tag:03d}_f{art.fold:02d}_{art.group}.json"
                network.save_checkpoint(ckpt_dir / name, art.params, meta)
        if art.history is not None:
            for (epoch, train_loss, val_loss, picp_v, mpiw_v) in art.history.to_rows():
                hist_rows.append((f"{art.confidence:.2f}", art.fold, art.group, epoch,
                                  train_loss, val_loss, picp_v, mpiw_v))
    if hist_rows:
        (outdir / "histories.csv").write_text(
            format_table(["confidence", "fold", "group", "epoch", "train_loss",
                          "val_loss", "picp", "mpiw"], hist_rows))


def cmd_train(args) -> int:
    resolved = _resolve(TRAIN_DEFAULTS, args.config, {
        "method": args.method,
        "scenario": args.scenario,
        "confidences": _parse_floats(args.confidence) if args.confidence else None,
        "k": args.k,
        "folds": args.folds,
        "seed": args.seed,
        "jobs": args.jobs,
        "hidden_layers": _parse_ints(args.hidden) if args.hidden else None,
        "activation": args.activation,
        "learning_rate": args.lr,
        "decay": args.decay,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "lam": args.lam,
        "eta_s": args.eta_s,
        "soften": args.soften,
        "clip_norm": args.clip_norm,
        "ga_population": args.population,
        "ga_parents": args.parents,
        "ga_genes_pct": args.genes_pct,
        "ga_generations": args.generations,
        "eta_l": args.eta_l,
        "bootstrap_members": args.b,
        "checkpoints": False if args.no_checkpoints else None,
    })
    if resolved["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    if resolved["scenario"] not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")

    ds = load_dataset(args.data)
    settings = _settings_from(resolved)
    confs = resolved["confidences"]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _json_dump(outdir / "resolved_config.json",
               {"command": "train", "data": str(args.data), "out": str(args.out),
                **resolved})

    scenario = resolved["scenario"]
    if scenario == "generalized":
        report, artifacts = run_generalized(ds, resolved["method"], settings, confs,
                                            return_artifacts=True)
    elif scenario == "personalized":
        report, artifacts = run_personalized(ds, resolved["method"], settings, confs,
                                             return_artifacts=True)
    else:
        report, artifacts = run_hybrid(ds, resolved["k"], resolved["method"], settings,
                                       confs, return_artifacts=True)

    _json_dump(outdir / "report.json", report.to_dict())
    report.write_tables(outdir)
    _write_artifacts(outdir, artifacts, ds.label_range, resolved["checkpoints"])
    for c in report.confidences:
        q = report.quality[c]
        print(f"{scenario}/{resolved['method']} @ {c:.2f}: picp={q.picp:.4f} "
              f"mpiw={q.mpiw:.4f} nmpiw={q.nmpiw:.4f}")
    return 0


def cmd_eval(args) -> int:
    payload = json.loads(Path(args.checkpoint).read_text())
    ds = load_dataset(args.data)
    meta = payload.get("meta", {})
    test_idx = np.array(meta.get("test_indices", []), dtype=int)
    if test_idx.size == 0 or test_idx.max() >= ds.n:
        raise ConfigError("checkpoint test indices do not match the dataset")
    norm = NormParams(np.array(meta["norm_min"]), np.array(meta["norm_max"]))
    if norm.col_min.shape[0] != ds.d:
        raise ConfigError(f"checkpoint expects {norm.col_min.shape[0]} features, "
                          f"dataset has {ds.d}")
    X = norm.apply(ds.features[test_idx])
    y = ds.labels[test_idx]
    target_range = float(meta.get("target_range", ds.label_range))

    rows = []
    if payload.get("kind") == "bootstrap_ensemble":
        ens, _ = load_ensemble(args.checkpoint)
        confs = sorted(float(c) for c in meta.get("quality", {}))
        if args.confidence:
            confs = _parse_floats(args.confidence)
        for c in confs:
            q = pi_quality(y, bootstrap_pi(ens, X, c), target_range)
            rows.append((f"{c:.2f}", q.picp, q.mpiw, q.nmpiw, q.crossing_rate))
    else:
        params, _ = network.load_checkpoint(args.checkpoint)
        if params.input_dim != ds.d:
            raise ConfigError(f"checkpoint expects {params.input_dim} features, "
                              f"dataset has {ds.d}")
        iv = network.forward(params, X)
        q = pi_quality(y, iv, target_range)
        conf = meta.get("confidence")
        rows.append((f"{conf:.2f}" if conf is not None else "-",
                     q.picp, q.mpiw, q.nmpiw, q.crossing_rate))

    table = format_table(["confidence", "picp", "mpiw", "nmpiw", "crossing_rate"], rows)
    print(table, end="")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "eval.csv").write_text(table)
        _json_dump(outdir / "resolved_config.json",
                   {"command": "eval", "checkpoint": str(args.checkpoint),
                    "data": str(args.data), "out": str(args.out),
                    "confidence": args.confidence})
    return 0


def cmd_tune(args) -> int:
    defaults = {"method": "loss_s", "confidence": 0.85, "budget": 10, "seed": 0,
                "folds": 10, "epochs": 60, "batch_size": 100, "jobs": 1,
                "ga_generations": 60, "bootstrap_members": 10}
    resolved = _resolve(defaults, args.config, {
        "method": args.method, "confidence": args.confidence, "budget": args.budget,
        "seed": args.seed, "folds": args.folds, "epochs": args.epochs,
        "jobs": args.jobs,
    })
    if resolved["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    ds = load_dataset(args.data)
    settings = RunSettings(folds=resolved["folds"], seed=resolved["seed"],
                           epochs=resolved["epochs"],
                           batch_size=resolved["batch_size"],
                           ga_generations=resolved["ga_generations"],
                           bootstrap_members=resolved["bootstrap_members"])
    space = SearchSpace.for_method(resolved["method"])
    objective = make_scenario_objective(ds, resolved["method"], settings,
                                        resolved["confidence"])
    best_cfg, trials = tune(space, resolved["budget"], objective, resolved["seed"])

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _json_dump(outdir / "resolved_config.json",
               {"command": "tune", "data": str(args.data), "out": str(args.out),
                **resolved})
    _json_dump(outdir / "best_config.json", {"method": resolved["method"],
                                             "confidence": resolved["confidence"],
                                             "config": best_cfg})
    rows = []
    for t in trials:
        cfg_json = json.dumps(t["config"], sort_keys=True)
        rows.append((t["trial"], t["shortfall"], t["width"], cfg_json))
    (outdir / "trials.csv").write_text(
        format_table(["trial", "shortfall", "width", "config"], rows))
    print(f"best config after {len(trials)} trials: {json.dumps(best_cfg, sort_keys=True)}")
    return 0


def cmd_report(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    wrote = []

    if args.runs:
        rows = []
        for run_dir in args.runs:
            payload = json.loads((Path(run_dir) / "report.json").read_text())
            report = ScenarioReport.from_dict(payload)
            for c in report.confidences:
                q = report.quality[c]
                rows.append((report.scenario, report.method, f"{c:.2f}", q.picp,
                             q.mpiw, q.nmpiw, q.crossing_rate))
        (outdir / "comparison.csv").write_text(
            format_table(["scenario", "method", "confidence", "picp", "mpiw", "nmpiw",
                          "crossing_rate"], rows))
        wrote.append("comparison.csv")

    if args.distances:
        if not args.data:
            raise ConfigError("--distances needs --data")
        ds = load_dataset(args.data)
        model = fit_clusters(ds, args.k, args.seed or 0)
        import warnings as _warnings

        from .data import minmax_normalize as _norm
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            ds_norm, _ = _norm(ds)
            profiles = subject_profiles(ds_norm, match="nearest")
        by_id = {p.subject_id: p for p in profiles}
        stat_rows, dist_rows = [], []
        for cl in range(model.k):
            members = [by_id[sid] for sid in model.subject_order
                       if model.assignments[sid] == cl]
            if len(members) < 2:
                continue
            stats = pairwise_distance_stats(members)
            stat_rows.append((cl, len(members), stats.mean, stats.q1, stats.median,
                              stats.q3, stats.outlier_count))
            for d in stats.distances:
                dist_rows.append((cl, float(d)))
        (outdir / "distance_stats.csv").write_text(
            format_table(["cluster", "subjects", "mean", "q1", "median", "q3",
                          "outliers"], stat_rows))
        (outdir / "distances.csv").write_text(
            format_table(["cluster", "distance"], dist_rows))
        wrote += ["distance_stats.csv", "distances.csv"]

    if args.sweep:
        if not args.data:
            raise ConfigError("--sweep needs --data")
        ds = load_dataset(args.data)
        settings = RunSettings(folds=args.folds or 10, seed=args.seed or 0,
                               epochs=args.epochs or 60)
        s_values = _parse_floats(args.s_values or "20,160")
        lam_values = _parse_floats(args.lam_values or "10,25")
        rows = softening_sweep(ds, s_values, lam_values, settings,
                               args.confidence_level or 0.85)
        (outdir / "sweep.csv").write_text(format_table(
            ["soften", "lam", "picp_soft", "mpiw_captured", "picp", "mpiw"],
            [(r["soften"], r["lam"], r["picp_soft"], r["mpiw_captured"], r["picp"],
              r["mpiw"]) for r in rows]))
        wrote.append("sweep.csv")

    if not wrote:
        raise ConfigError("nothing to report: pass --runs, --distances or --sweep")
    _json_dump(outdir / "resolved_config.json",
               {"command": "report", "runs": list(args.runs or []),
                "distances": bool(args.distances), "sweep": bool(args.sweep),
                "data": args.data, "k": args.k, "seed": args.seed,
                "out": str(args.out)})
    print(f"wrote {', '.join(wrote)} to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnpi",
                                     description="Neural-network prediction intervals")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--noise", choices=["homoscedastic", "heteroscedastic"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--sigma-slope", dest="sigma_slope", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a scenario and write reports/checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--scenario", choices=list(SCENARIOS))
    p.add_argument("--confidence", help="comma-separated levels, e.g. 0.5,0.85")
    p.add_argument("--k", type=int, help="clusters for the hybrid scenario")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 16,16")
    p.add_argument("--activation", choices=["relu", "tanh", "linear"])
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--eta-s", dest="eta_s", type=float)
    p.add_argument("--soften", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--population", type=int)
    p.add_argument("--parents", type=int)
    p.add_argument("--genes-pct", dest="genes_pct", type=float)
    p.add_argument("--generations", type=int)
    p.add_argument("--eta-l", dest="eta_l", type=float)
    p.add_argument("--b", type=int, help="bootstrap ensemble size")
    p.add_argument("--no-checkpoints", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its stored test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--confidence", help="comma-separated levels (ensembles only)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="random hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--confidence", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="emit comparison tables and plot-ready series")
    p.add_argument("--runs", nargs="*", help="train output directories to compare")
    p.add_argument("--distances", action="store_true",
                   help="pairwise profile distances per cluster")
    p.add_argument("--sweep", action="store_true",
                   help="softening-factor sweep series (trains models)")
    p.add_argument("--data")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--s-values", dest="s_values")
    p.add_argument("--lam-values", dest="lam_values")
    p.add_argument("--confidence-level", dest="confidence_level", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SchemaError, ParseError, EmptyInputError, ConfigError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
