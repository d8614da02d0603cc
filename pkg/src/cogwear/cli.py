"""Command-line frontend: seeded, config-driven batch runs.

Every subcommand writes its artifacts under ``<outdir>/<run-id>/`` together
with a manifest listing each file and its content hash. The run id defaults
to a digest of the effective configuration, so re-running the same command
with the same inputs and seed overwrites the directory with identical bytes.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 schema mismatch.
Failures print a one-line JSON object to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import pipeline, registry
from .errors import CogwearError, DataError, SchemaError
from .features import extract_cohort
from .ingest import (
    apply_exclusions,
    label_outcomes,
    parse_epochs,
    parse_survey,
    write_epochs,
    write_survey,
)
from .learn import GbmConfig, fit_gbm, log_loss
from .learn.importance import loss_change_importance, paired_importance
from .matrix import FeatureMatrix
from .parallel import default_threads
from .pipeline import (
    EvalReport,
    ModelSpec,
    SearchSpace,
    benchmark_spec,
    cohort_summary,
    draw_folds,
    emit_reports,
    impute_split,
    recursive_feature_elimination,
    repeated_cv_evaluate,
    tune_hyperparameters,
    write_summary_csv,
)
from .simlab import ClassParams, SimSpec, write_cohort_csv

TARGETS = ("dsst", "cerad", "aft")
MODEL_TYPES = ("benchmark", "wearable", "combined")

LABEL_COLUMNS = {"dsst": "poor_dsst", "cerad": "poor_cerad", "aft": "poor_aft"}


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(ns: argparse.Namespace) -> dict[str, Any]:
    if getattr(ns, "config", None):
        return json.loads(Path(ns.config).read_text())
    return {}


def _opt(ns: argparse.Namespace, cfg: dict[str, Any], key: str, default=None):
    """Flag value if given, else config-file value, else default."""
    value = getattr(ns, key.replace("-", "_"), None)
    if value is not None:
        return value
    return cfg.get(key, default)


def _run_dir(ns: argparse.Namespace, command: str, effective: dict[str, Any]) -> Path:
    outdir = Path(effective.get("outdir") or ".")
    run_id = effective.get("run_id")
    if not run_id:
        digest = hashlib.sha256(
            json.dumps(effective, sort_keys=True, default=str).encode()
        ).hexdigest()[:10]
        run_id = f"{command}-{digest}"
    run_dir = outdir / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_manifest(run_dir: Path, command: str, effective: dict[str, Any],
                    artifacts: list[Path]) -> Path:
    entries = []
    for path in sorted(set(artifacts)):
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        entries.append({"path": Path(path).name, "sha256": digest})
    manifest = {"command": command, "config": effective, "artifacts": entries}
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return out


def _write_json(path: Path, payload: Any) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _read_labels(path: str | Path) -> tuple[list[str], dict[str, np.ndarray]]:
    import pandas as pd

    df = pd.read_csv(path, dtype={"participant_id": str})
    expected = ["participant_id", "poor_dsst", "poor_cerad", "poor_aft"]
    if list(df.columns) != expected:
        raise SchemaError(f"labels header {list(df.columns)} != {expected}")
    ids = df["participant_id"].tolist()
    return ids, {t: df[LABEL_COLUMNS[t]].to_numpy(dtype=bool) for t in TARGETS}


def _load_matrix_and_labels(ns, cfg) -> tuple[FeatureMatrix, np.ndarray]:
    fm = FeatureMatrix.from_csv(_require(ns, cfg, "features"))
    label_ids, labels = _read_labels(_require(ns, cfg, "labels"))
    if label_ids != fm.ids:
        raise DataError("label rows do not align with the feature matrix rows")
    target = _require(ns, cfg, "target")
    if target not in TARGETS:
        raise DataError(f"target must be one of {TARGETS}")
    return fm, labels[target]


def _require(ns, cfg, key: str):
    value = _opt(ns, cfg, key)
    if value is None:
        raise DataError(f"missing required option --{key.replace('_', '-')}")
    return value


def _feature_set(ns, cfg, model_type: str) -> list[str]:
    if model_type == "benchmark":
        return list(registry.BENCHMARK_FEATURES)
    selected_path = _require(ns, cfg, "selected")
    payload = json.loads(Path(selected_path).read_text())
    features = payload["features"]
    if model_type == "combined":
        return registry.combined_features(features)
    return features


def _gbm_config(ns, cfg, seed: int) -> GbmConfig:
    path = _opt(ns, cfg, "gbm_config")
    if path:
        payload = json.loads(Path(path).read_text())
        payload = payload.get("best_config", payload)
        return GbmConfig(**payload)
    return GbmConfig(seed=seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    sim_cfg = cfg.get("simulate", {})
    spec = SimSpec(
        n_participants=int(_opt(ns, sim_cfg, "n", 100)),
        days=int(_opt(ns, sim_cfg, "days", 7)),
        prevalence=float(_opt(ns, sim_cfg, "prevalence", 0.25)),
        affected=ClassParams(**sim_cfg.get("affected", {"score_mean": 30.0})),
        unaffected=ClassParams(**sim_cfg.get("unaffected", {})),
        profile=str(_opt(ns, sim_cfg, "profile", "rect")),
        missing_rate=float(_opt(ns, sim_cfg, "missing_rate", 0.0)),
        seed=int(_opt(ns, cfg, "seed", 0)),
    )
    effective = {"outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
                 "spec": dataclasses.asdict(spec)}
    run_dir = _run_dir(ns, "simulate", effective)
    epochs_path = run_dir / "epochs.csv"
    survey_path = run_dir / "survey.csv"
    classes = write_cohort_csv(spec, epochs_path, survey_path)
    truth = _write_json(run_dir / "truth.json", {
        "affected": [bool(c) for c in classes], "seed": spec.seed,
    })
    _write_manifest(run_dir, "simulate", effective, [epochs_path, survey_path, truth])
    print(run_dir)
    return 0


def cmd_ingest(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    epochs_in = _require(ns, cfg, "epochs")
    survey_in = _require(ns, cfg, "survey")
    effective = {"outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
                 "epochs": str(epochs_in), "survey": str(survey_in)}
    run_dir = _run_dir(ns, "ingest", effective)

    parsed = parse_epochs(epochs_in)
    conv, scores, survey_report = parse_survey(survey_in)
    cohort_ids = apply_exclusions(parsed.series, scores, conv)
    if not cohort_ids:
        raise DataError("no participants satisfy the inclusion criteria")
    id_set = set(cohort_ids)
    cohort_series = [s for s in parsed.series if s.participant_id in id_set]
    cohort_conv = [c for c in conv if c.participant_id in id_set]
    cohort_scores = [s for s in scores if s.participant_id in id_set]
    labels = label_outcomes(cohort_scores)

    epochs_out = run_dir / "epochs.csv"
    survey_out = run_dir / "survey.csv"
    write_epochs(cohort_series, epochs_out)
    write_survey(cohort_conv, cohort_scores, survey_out)

    labels_path = run_dir / "labels.csv"
    lines = ["participant_id,poor_dsst,poor_cerad,poor_aft"]
    for lab in sorted(labels, key=lambda l: l.participant_id):
        lines.append(
            f"{lab.participant_id},{int(lab.poor_dsst)},{int(lab.poor_cerad)},{int(lab.poor_aft)}"
        )
    labels_path.write_text("\n".join(lines) + "\n")

    cohort_path = _write_json(run_dir / "cohort.json", {
        "n": len(cohort_ids),
        "ids": cohort_ids,
        "cutoffs": {
            "dsst": labels[0].cutoff_dsst,
            "cerad": labels[0].cutoff_cerad,
            "aft": labels[0].cutoff_aft,
        },
        "poor_counts": {
            "dsst": sum(l.poor_dsst for l in labels),
            "cerad": sum(l.poor_cerad for l in labels),
            "aft": sum(l.poor_aft for l in labels),
        },
        "epoch_parse": dataclasses.asdict(parsed.report),
        "survey_parse": dataclasses.asdict(survey_report),
    })
    _write_manifest(run_dir, "ingest", effective,
                    [epochs_out, survey_out, labels_path, cohort_path])
    print(run_dir)
    return 0


def cmd_features(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    epochs_in = _require(ns, cfg, "epochs")
    survey_in = _require(ns, cfg, "survey")
    threads = _opt(ns, cfg, "threads") or default_threads()
    effective = {"outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
                 "epochs": str(epochs_in), "survey": str(survey_in)}
    run_dir = _run_dir(ns, "features", effective)

    parsed = parse_epochs(epochs_in)
    conv, scores, _ = parse_survey(survey_in)
    cohort_ids = sorted(s.participant_id for s in parsed.series)
    fm = extract_cohort(parsed.series, conv, cohort_ids, threads=int(threads))

    features_path = run_dir / "features.csv"
    meta_path = run_dir / "features.meta.json"
    fm.to_csv(features_path, meta_path)
    summary_path = run_dir / "summary.csv"
    write_summary_csv(cohort_summary(conv, fm), summary_path)
    _write_manifest(run_dir, "features", effective,
                    [features_path, meta_path, summary_path])
    print(run_dir)
    return 0


def cmd_select(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    fm, y = _load_matrix_and_labels(ns, cfg)
    seed = int(_require(ns, cfg, "seed"))
    policy = _opt(ns, cfg, "imputation", pipeline.POLICY_TRAIN_DONOR)
    rfe_cfg = GbmConfig(**cfg.get("rfe", {}))
    effective = {
        "outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
        "target": _opt(ns, cfg, "target"), "seed": seed, "imputation": policy,
        "rfe": dataclasses.asdict(rfe_cfg),
    }
    run_dir = _run_dir(ns, "select", effective)

    candidates = fm.select_columns(registry.WEARABLE_CANDIDATES)
    trace = recursive_feature_elimination(candidates, y, rfe_cfg, seed, policy=policy)
    trace_path = _write_json(run_dir / "rfe_trace.json", trace.to_dict())
    selected_path = _write_json(run_dir / "selected_features.json", {
        "target": effective["target"],
        "features": trace.chosen_features,
    })
    _write_manifest(run_dir, "select", effective, [trace_path, selected_path])
    print(run_dir)
    return 0


def cmd_tune(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    fm, y = _load_matrix_and_labels(ns, cfg)
    seed = int(_require(ns, cfg, "seed"))
    folds = int(_opt(ns, cfg, "folds", 10))
    policy = _opt(ns, cfg, "imputation", pipeline.POLICY_TRAIN_DONOR)
    threads = int(_opt(ns, cfg, "threads") or default_threads())
    space = SearchSpace.from_dict(cfg.get("space", {}))
    trials = _opt(ns, cfg, "trials")
    if trials is not None:
        space = dataclasses.replace(space, n_trials=int(trials))
    features = _feature_set(ns, cfg, "wearable")
    effective = {
        "outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
        "target": _opt(ns, cfg, "target"), "seed": seed, "folds": folds,
        "imputation": policy, "space": space.to_dict(), "features": features,
    }
    run_dir = _run_dir(ns, "tune", effective)

    result = tune_hyperparameters(
        fm.select_columns(features), y, space, seed,
        folds=folds, policy=policy, threads=threads,
    )
    payload = result.to_dict()
    best_path = _write_json(run_dir / "best_config.json", payload["best_config"])
    trials_path = _write_json(run_dir / "trials.json", payload["trials"])
    _write_manifest(run_dir, "tune", effective, [best_path, trials_path])
    print(run_dir)
    return 0


def cmd_evaluate(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    fm, y = _load_matrix_and_labels(ns, cfg)
    seed = int(_require(ns, cfg, "seed"))
    model_type = _require(ns, cfg, "model")
    if model_type not in MODEL_TYPES:
        raise DataError(f"model must be one of {MODEL_TYPES}")
    target = _opt(ns, cfg, "target")
    repeats = int(_opt(ns, cfg, "repeats", 20))
    folds = int(_opt(ns, cfg, "folds", 10))
    policy = _opt(ns, cfg, "imputation", pipeline.POLICY_TRAIN_DONOR)
    threads = int(_opt(ns, cfg, "threads") or default_threads())

    if model_type == "benchmark":
        spec = benchmark_spec(target)
    else:
        spec = ModelSpec(
            target=target,
            model_type=model_type,
            feature_names=_feature_set(ns, cfg, model_type),
            gbm_config=_gbm_config(ns, cfg, seed),
        )
    effective = {
        "outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
        "target": target, "model": model_type, "seed": seed,
        "repeats": repeats, "folds": folds, "imputation": policy,
        "features": spec.feature_names,
        "gbm_config": dataclasses.asdict(spec.gbm_config) if spec.gbm_config else None,
    }
    run_dir = _run_dir(ns, "evaluate", effective)

    report = repeated_cv_evaluate(
        fm, y, spec, repeats=repeats, folds=folds, seed=seed,
        policy=policy, threads=threads,
    )
    report_path = run_dir / "eval_report.json"
    report_path.write_text(report.to_json())
    _write_manifest(run_dir, "evaluate", effective, [report_path])
    print(run_dir)
    return 0


def cmd_importance(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    fm, y = _load_matrix_and_labels(ns, cfg)
    seed = int(_require(ns, cfg, "seed"))
    model_type = _require(ns, cfg, "model")
    if model_type == "benchmark":
        raise DataError("importance reports are defined for the boosted-tree models")
    target = _opt(ns, cfg, "target")
    policy = _opt(ns, cfg, "imputation", pipeline.POLICY_TRAIN_DONOR)
    features = _feature_set(ns, cfg, model_type)
    config = _gbm_config(ns, cfg, seed)
    effective = {
        "outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
        "target": target, "model": model_type, "seed": seed,
        "imputation": policy, "features": features,
        "gbm_config": dataclasses.asdict(config),
    }
    run_dir = _run_dir(ns, "importance", effective)

    work = fm.select_columns(features)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1337]))
    fold, _ = draw_folds(np.asarray(y, dtype=bool), 5, rng)
    valid_mask = fold == 0
    train_imp, valid_imp = impute_split(
        work.select_rows(~valid_mask), work.select_rows(valid_mask), policy
    )
    xt, names = train_imp.one_hot()
    xv, _ = valid_imp.one_hot()
    model = fit_gbm(xt, y[~valid_mask], xv, y[valid_mask],
                    config=config, feature_names=names)
    report = paired_importance(model, xv, y[valid_mask])
    payload = {
        "target": target,
        "model_type": model_type,
        "validation_loss": log_loss(model.predict_proba(xv), y[valid_mask]),
        "single": [[n, v] for n, v in report.single],
        "pairs": [[a, b, v] for a, b, v in report.pairs],
    }
    imp_path = _write_json(run_dir / "importance.json", payload)
    _write_manifest(run_dir, "importance", effective, [imp_path])
    print(run_dir)
    return 0


def cmd_report(ns: argparse.Namespace) -> int:
    cfg = _load_config(ns)
    eval_paths = list(getattr(ns, "evals", None) or cfg.get("evals", []))
    imp_paths = list(getattr(ns, "importances", None) or cfg.get("importances", []))
    if not eval_paths:
        raise DataError("report requires at least one eval_report.json")
    effective = {"outdir": _opt(ns, cfg, "outdir", "."), "run_id": _opt(ns, cfg, "run_id"),
                 "evals": [str(p) for p in eval_paths],
                 "importances": [str(p) for p in imp_paths]}
    run_dir = _run_dir(ns, "report", effective)

    reports = [EvalReport.from_json(Path(p).read_text()) for p in eval_paths]
    importances = []
    for p in imp_paths:
        payload = json.loads(Path(p).read_text())
        from .learn.importance import ImportanceReport

        importances.append((
            f"{payload['target']}_{payload['model_type']}",
            ImportanceReport(
                single=[(n, v) for n, v in payload["single"]],
                pairs=[(a, b, v) for a, b, v in payload.get("pairs", [])],
            ),
        ))
    written = emit_reports(reports, importances, run_dir)
    _write_manifest(run_dir, "report", effective, written)
    print(run_dir)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cogwear",
        description="Wearable-based screening pipeline for poor cognitive performance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--outdir", help="base output directory (default .)")
        p.add_argument("--run-id", dest="run_id", help="output subdirectory name")
        p.add_argument("--seed", type=int, help="seed for all randomized behavior")
        p.add_argument("--threads", type=int, help="worker processes (default: cores)")

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--n", type=int, help="participants")
    p.add_argument("--days", type=int, help="days of data per participant")
    p.add_argument("--prevalence", type=float, help="affected-class prevalence")
    p.add_argument("--profile", choices=("rect", "sine"))
    p.add_argument("--missing-rate", dest="missing_rate", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="parse, apply exclusions, label outcomes")
    common(p)
    p.add_argument("--epochs", help="epoch CSV path")
    p.add_argument("--survey", help="survey CSV path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="extract the feature matrix")
    common(p)
    p.add_argument("--epochs", help="cohort epoch CSV (from ingest)")
    p.add_argument("--survey", help="cohort survey CSV (from ingest)")
    p.set_defaults(func=cmd_features)

    def modeling_common(p: argparse.ArgumentParser):
        common(p)
        p.add_argument("--features", help="features.csv from the features step")
        p.add_argument("--labels", help="labels.csv from the ingest step")
        p.add_argument("--target", choices=TARGETS)
        p.add_argument("--imputation", choices=pipeline.IMPUTATION_POLICIES)

    p = sub.add_parser("select", help="recursive feature elimination")
    modeling_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("tune", help="hyperparameter random search")
    modeling_common(p)
    p.add_argument("--selected", help="selected_features.json from select")
    p.add_argument("--folds", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="repeated cross-validated AUC")
    modeling_common(p)
    p.add_argument("--model", choices=MODEL_TYPES)
    p.add_argument("--selected", help="selected_features.json (wearable/combined)")
    p.add_argument("--gbm-config", dest="gbm_config", help="best_config.json from tune")
    p.add_argument("--repeats", type=int)
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="loss-change and paired importance")
    modeling_common(p)
    p.add_argument("--model", choices=("wearable", "combined"))
    p.add_argument("--selected", help="selected_features.json")
    p.add_argument("--gbm-config", dest="gbm_config", help="best_config.json from tune")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="emit plots and pooled CSVs")
    common(p)
    p.add_argument("--evals", nargs="+", help="eval_report.json paths")
    p.add_argument("--importances", nargs="*", help="importance.json paths")
    p.set_defaults(func=cmd_report)

    return parser


def _print_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except SchemaError as exc:
        _print_error(exc)
        return 3
    except (CogwearError, OSError, ValueError, KeyError) as exc:
        _print_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
