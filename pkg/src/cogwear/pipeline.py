"""Experiment orchestration: feature selection, tuning, evaluation, reports.

Everything here is driven by explicit seeds. Cross-validation folds are
stratified; imputation happens inside each train/validation split so no
validation information leaks into training (the donor pool is configurable,
see ``POLICY_*``).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import DataError
from .ingest import ConventionalRecord
from .learn import (
    GbmConfig,
    GbmModel,
    ImportanceReport,
    auc,
    fit_gbm,
    fit_logistic,
    knn_impute,
    log_loss,
    predict,
)
from .learn.importance import _Neutralizer
from .matrix import FeatureMatrix
from .parallel import run_parallel
from .registry import BENCHMARK_FEATURES

os.environ.setdefault("MPLBACKEND", "Agg")

POLICY_TRAIN_DONOR = "train-donor"   # validation rows imputed from training donors
POLICY_SELF_DONOR = "self-donor"     # validation rows imputed among themselves
IMPUTATION_POLICIES = (POLICY_TRAIN_DONOR, POLICY_SELF_DONOR)

CI_Z = 1.96
MAX_FOLD_REDRAWS = 100


# ---------------------------------------------------------------------------
# folds and split plumbing

def stratified_folds(y: np.ndarray, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; each class is dealt round-robin after a shuffle."""
    y = np.asarray(y).astype(bool)
    if n_folds < 2 or n_folds > len(y):
        raise DataError(f"cannot form {n_folds} folds from {len(y)} rows")
    fold = np.empty(len(y), dtype=np.int64)
    for cls in (True, False):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        fold[idx] = np.arange(len(idx)) % n_folds
    return fold


def _folds_usable(y: np.ndarray, fold: np.ndarray, n_folds: int) -> bool:
    y = np.asarray(y).astype(bool)
    for f in range(n_folds):
        valid = fold == f
        if y[valid].all() or not y[valid].any():
            return False
        train = ~valid
        if y[train].all() or not y[train].any():
            return False
    return True


def draw_folds(
    y: np.ndarray, n_folds: int, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Fold assignment, redrawing (counted) until every fold sees both classes."""
    redraws = 0
    for _ in range(MAX_FOLD_REDRAWS):
        fold = stratified_folds(y, n_folds, rng)
        if _folds_usable(y, fold, n_folds):
            return fold, redraws
        redraws += 1
    raise DataError("could not draw usable folds; too few minority-class rows")


def impute_split(
    train_fm: FeatureMatrix, valid_fm: FeatureMatrix, policy: str
) -> tuple[FeatureMatrix, FeatureMatrix]:
    if policy not in IMPUTATION_POLICIES:
        raise DataError(f"unknown imputation policy {policy!r}")
    train_imp = knn_impute(train_fm, train_fm)
    donors = train_fm if policy == POLICY_TRAIN_DONOR else valid_fm
    valid_imp = knn_impute(donors, valid_fm)
    return train_imp, valid_imp


# ---------------------------------------------------------------------------
# model specification

@dataclass(frozen=True)
class ModelSpec:
    target: str                     # dsst | cerad | aft
    model_type: str                 # benchmark | wearable | combined
    feature_names: list[str] = field(default_factory=list)
    gbm_config: GbmConfig | None = None

    @property
    def algorithm(self) -> str:
        return "logistic" if self.model_type == "benchmark" else "gbm"


def benchmark_spec(target: str) -> ModelSpec:
    return ModelSpec(target=target, model_type="benchmark",
                     feature_names=list(BENCHMARK_FEATURES))


def _fit_model(spec: ModelSpec, x: np.ndarray, y: np.ndarray, names: list[str]):
    if spec.algorithm == "logistic":
        return fit_logistic(x, y, names)
    config = spec.gbm_config if spec.gbm_config is not None else GbmConfig()
    return fit_gbm(x, y, config=config, feature_names=names)


# ---------------------------------------------------------------------------
# recursive feature elimination

@dataclass
class RfeStep:
    eliminated: str
    valid_loss: float


@dataclass
class RfeTrace:
    initial_loss: float
    steps: list[RfeStep]
    chosen_features: list[str]
    chosen_loss: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial_loss": self.initial_loss,
            "steps": [{"eliminated": s.eliminated, "valid_loss": s.valid_loss}
                      for s in self.steps],
            "chosen_features": list(self.chosen_features),
            "chosen_loss": self.chosen_loss,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RfeTrace":
        return cls(
            initial_loss=d["initial_loss"],
            steps=[RfeStep(s["eliminated"], s["valid_loss"]) for s in d["steps"]],
            chosen_features=list(d["chosen_features"]),
            chosen_loss=d["chosen_loss"],
        )


def _column_groups(columns: list[str], expanded: list[str]) -> dict[str, list[int]]:
    """Map each original column to its expanded design-matrix indices."""
    groups: dict[str, list[int]] = {c: [] for c in columns}
    for j, name in enumerate(expanded):
        base = name if name in groups else name.rsplit("_", 1)[0]
        groups[base].append(j)
    return groups


def recursive_feature_elimination(
    fm: FeatureMatrix,
    y: np.ndarray,
    config: GbmConfig,
    seed: int,
    policy: str = POLICY_TRAIN_DONOR,
    exact: bool = False,
    valid_folds: int = 5,
) -> RfeTrace:
    """Backward elimination on a single stratified train/validation split.

    At each step the current early-stopped model scores every remaining
    feature by the validation loss after neutralizing it; the feature whose
    removal looks cheapest is dropped and the model retrained. The chosen set
    is the one with the lowest recorded retrained validation loss (the full
    set competes too). ``exact=True`` replaces neutralization scoring with a
    retrain per candidate, which is much slower.
    """
    if len(fm.columns) < 2:
        raise DataError("recursive elimination needs at least 2 candidate features")
    y = np.asarray(y).astype(bool)
    seq = np.random.SeedSequence([seed, 0x5E1EC7])
    rng = np.random.default_rng(seq)
    fold, _ = draw_folds(y, valid_folds, rng)
    valid_mask = fold == 0
    train_fm, valid_fm = impute_split(
        fm.select_rows(~valid_mask), fm.select_rows(valid_mask), policy
    )
    y_train, y_valid = y[~valid_mask], y[valid_mask]
    fit_seed = int(seq.generate_state(1)[0])
    config = replace(config, seed=fit_seed)

    def fit_and_loss(columns: list[str]) -> tuple[GbmModel, np.ndarray, np.ndarray, float]:
        xt, names = train_fm.select_columns(columns).one_hot()
        xv, _ = valid_fm.select_columns(columns).one_hot()
        # early stopping against the held-out part of the split
        model = fit_gbm(xt, y_train, xv, y_valid, config=config, feature_names=names)
        return model, xt, xv, log_loss(model.predict_proba(xv), y_valid)

    current = list(fm.columns)
    model, _, xv, initial_loss = fit_and_loss(current)
    steps: list[RfeStep] = []
    while len(current) > 1:
        if exact:
            losses = []
            for col in current:
                remaining = [c for c in current if c != col]
                losses.append(fit_and_loss(remaining)[3])
        else:
            neut = _Neutralizer(model, xv, y_valid)
            groups = _column_groups(current, model.feature_names)
            losses = [
                neut.full_loss + neut.loss_change(frozenset(groups[col]))
                for col in current
            ]
        victim = current[int(np.argmin(losses))]
        current = [c for c in current if c != victim]
        model, _, xv, loss = fit_and_loss(current)
        steps.append(RfeStep(eliminated=victim, valid_loss=loss))

    all_losses = [initial_loss] + [s.valid_loss for s in steps]
    best = int(np.argmin(all_losses))
    eliminated = [s.eliminated for s in steps[:best]]
    chosen = [c for c in fm.columns if c not in eliminated]
    return RfeTrace(
        initial_loss=initial_loss,
        steps=steps,
        chosen_features=chosen,
        chosen_loss=all_losses[best],
    )


# ---------------------------------------------------------------------------
# hyperparameter search

@dataclass(frozen=True)
class SearchSpace:
    learning_rate: tuple[float, float] = (0.01, 0.3)   # log-uniform
    iterations: tuple[int, int] = (100, 2000)
    max_depth: tuple[int, int] = (3, 10)
    subsample: tuple[float, float] = (0.5, 1.0)
    n_trials: int = 200

    def __post_init__(self):
        for name in ("learning_rate", "iterations", "max_depth", "subsample"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DataError(f"search bound {name} is reversed")
        if self.n_trials < 1:
            raise DataError("n_trials must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "learning_rate": list(self.learning_rate),
            "iterations": list(self.iterations),
            "max_depth": list(self.max_depth),
            "subsample": list(self.subsample),
            "n_trials": self.n_trials,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SearchSpace":
        return cls(
            learning_rate=tuple(d.get("learning_rate", (0.01, 0.3))),
            iterations=tuple(d.get("iterations", (100, 2000))),
            max_depth=tuple(d.get("max_depth", (3, 10))),
            subsample=tuple(d.get("subsample", (0.5, 1.0))),
            n_trials=int(d.get("n_trials", 200)),
        )


def sample_config(space: SearchSpace, rng: np.random.Generator, seed: int) -> GbmConfig:
    lr_lo, lr_hi = space.learning_rate
    if lr_lo == lr_hi:
        lr = lr_lo   # avoid the exp(log(.)) round trip on a collapsed bound
    else:
        lr = float(np.exp(rng.uniform(np.log(lr_lo), np.log(lr_hi))))
    return GbmConfig(
        learning_rate=lr,
        iterations=int(rng.integers(space.iterations[0], space.iterations[1] + 1)),
        max_depth=int(rng.integers(space.max_depth[0], space.max_depth[1] + 1)),
        subsample=float(rng.uniform(space.subsample[0], space.subsample[1])),
        seed=seed,
    )


@dataclass
class TrialRecord:
    index: int
    config: GbmConfig
    mean_auc: float


@dataclass
class TuneResult:
    best_config: GbmConfig
    trials: list[TrialRecord]

    def to_dict(self) -> dict[str, Any]:
        def cfg(c: GbmConfig) -> dict[str, Any]:
            return {
                "learning_rate": c.learning_rate, "iterations": c.iterations,
                "max_depth": c.max_depth, "subsample": c.subsample,
                "l2_leaf": c.l2_leaf,
                "early_stopping_patience": c.early_stopping_patience,
                "seed": c.seed, "max_bins": c.max_bins,
            }
        return {
            "best_config": cfg(self.best_config),
            "trials": [
                {"index": t.index, "config": cfg(t.config), "mean_auc": t.mean_auc}
                for t in self.trials
            ],
        }


def _prepare_fold_data(
    fm: FeatureMatrix, y: np.ndarray, fold: np.ndarray, n_folds: int, policy: str
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[str]]]:
    prepared = []
    for f in range(n_folds):
        valid_mask = fold == f
        train_imp, valid_imp = impute_split(
            fm.select_rows(~valid_mask), fm.select_rows(valid_mask), policy
        )
        xt, names = train_imp.one_hot()
        xv, _ = valid_imp.one_hot()
        prepared.append((xt, y[~valid_mask], xv, y[valid_mask], names))
    return prepared


def _trial_auc(
    prepared, config: GbmConfig
) -> float:
    scores = []
    for xt, yt, xv, yv, names in prepared:
        model = fit_gbm(xt, yt, config=config, feature_names=names)
        scores.append(auc(model.predict_proba(xv), yv))
    return float(np.mean(scores))


def tune_hyperparameters(
    fm: FeatureMatrix,
    y: np.ndarray,
    space: SearchSpace,
    seed: int,
    folds: int = 10,
    policy: str = POLICY_TRAIN_DONOR,
    objective: Callable[[GbmConfig], float] | None = None,
    threads: int = 1,
) -> TuneResult:
    """Seeded random search; each trial is scored by stratified k-fold mean AUC.

    ``objective`` swaps the CV scorer for an injected function (used by
    tests); the trial loop, sampling, and argmax logic stay identical.
    """
    y = np.asarray(y).astype(bool)
    if len(y) < folds:
        raise DataError("fewer rows than folds")
    master = np.random.SeedSequence([seed, 0x7D7E])
    fold_seq, *trial_seqs = master.spawn(space.n_trials + 1)
    fold, _ = draw_folds(y, folds, np.random.default_rng(fold_seq))

    prepared = None
    if objective is None:
        prepared = _prepare_fold_data(fm, y, fold, folds, policy)

    configs = []
    for t in range(space.n_trials):
        trial_rng = np.random.default_rng(trial_seqs[t])
        fit_seed = int(trial_seqs[t].generate_state(1)[0])
        configs.append(sample_config(space, trial_rng, fit_seed))

    if objective is not None:
        scores = [float(objective(c)) for c in configs]
    else:
        scores = run_parallel(partial(_trial_auc, prepared), configs, threads)

    trials = [TrialRecord(index=t, config=c, mean_auc=s)
              for t, (c, s) in enumerate(zip(configs, scores))]
    best = int(np.argmax(scores))
    return TuneResult(best_config=configs[best], trials=trials)


# ---------------------------------------------------------------------------
# repeated cross-validation

@dataclass
class EvalReport:
    target: str
    model_type: str
    seed: int
    repeats: int
    folds: int
    aucs: list[list[float]]          # [repeat][fold]
    mean_auc: float
    ci_low: float
    ci_high: float
    fold_redraws: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "model_type": self.model_type,
            "seed": self.seed,
            "repeats": self.repeats,
            "folds": self.folds,
            "aucs": self.aucs,
            "mean_auc": self.mean_auc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "fold_redraws": self.fold_redraws,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def _one_repeat(
    fm: FeatureMatrix,
    y: np.ndarray,
    spec: ModelSpec,
    folds: int,
    policy: str,
    seq: np.random.SeedSequence,
) -> tuple[list[float], int]:
    rng = np.random.default_rng(seq)
    fold, redraws = draw_folds(y, folds, rng)
    aucs = []
    for f in range(folds):
        valid_mask = fold == f
        train_imp, valid_imp = impute_split(
            fm.select_rows(~valid_mask), fm.select_rows(valid_mask), policy
        )
        xt, names = train_imp.one_hot()
        xv, _ = valid_imp.one_hot()
        model = _fit_model(spec, xt, y[~valid_mask], names)
        aucs.append(auc(predict(model, xv), y[valid_mask]))
    return aucs, redraws


def repeated_cv_evaluate(
    fm: FeatureMatrix,
    y: np.ndarray,
    spec: ModelSpec,
    repeats: int = 20,
    folds: int = 10,
    seed: int = 0,
    policy: str = POLICY_TRAIN_DONOR,
    threads: int = 1,
) -> EvalReport:
    """Optimism-adjusted AUC over ``repeats`` fresh stratified fold assignments.

    The normal-approximation CI is mean +/- 1.96 * SD / sqrt(repeats * folds)
    over all per-fold AUCs.
    """
    y = np.asarray(y).astype(bool)
    work = fm.select_columns(spec.feature_names)
    seqs = np.random.SeedSequence([seed, 0xE7A1]).spawn(repeats)
    results = run_parallel(
        partial(_one_repeat, work, y, spec, folds, policy), seqs, threads
    )
    aucs = [r[0] for r in results]
    redraws = sum(r[1] for r in results)
    flat = np.array([a for row in aucs for a in row])
    mean = float(flat.mean())
    half = CI_Z * float(flat.std(ddof=1)) / math.sqrt(len(flat)) if len(flat) > 1 else math.nan
    return EvalReport(
        target=spec.target,
        model_type=spec.model_type,
        seed=seed,
        repeats=repeats,
        folds=folds,
        aucs=aucs,
        mean_auc=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        fold_redraws=redraws,
    )


# ---------------------------------------------------------------------------
# cohort summary and report emission

EDUCATION_LABELS = {
    1: "Below 9th grade", 2: "9th-11th grade", 3: "High school or GED",
    4: "Some college", 5: "College graduate",
}
MARITAL_LABELS = {
    1: "Married", 2: "Widowed", 3: "Divorced",
    4: "Separated", 5: "Never married", 6: "Living with partner",
}
INCOME_LABELS = {
    1: "[0,5k)", 2: "[5k,10k)", 3: "[10k,15k)", 4: "[15k,20k)", 5: "[20k,25k)",
    6: "[25k,35k)", 7: "[35k,45k)", 8: "[45k,55k)", 9: "[55k,65k)",
    10: "[65k,75k)", 11: "[75k,100k)", 12: "[100k,inf)",
}


@dataclass(frozen=True)
class SummaryRow:
    characteristic: str
    value: str


def _numeric_row(label: str, values: np.ndarray) -> SummaryRow:
    values = values[~np.isnan(values)]
    if len(values) == 0:
        return SummaryRow(label, "")
    if len(values) == 1:
        return SummaryRow(label, f"{values[0]:.2f} (-)")
    return SummaryRow(label, f"{values.mean():.2f} ({values.std(ddof=1):.2f})")


def _count_rows(
    label: str, codes: list[int | None], labels: dict[int, str], total: int
) -> list[SummaryRow]:
    rows = [SummaryRow(label, "")]
    for code, name in labels.items():
        n = sum(1 for c in codes if c == code)
        rows.append(SummaryRow(f"  {name}", f"{n} ({100.0 * n / total:.2f})"))
    return rows


def cohort_summary(conv: list[ConventionalRecord], fm: FeatureMatrix) -> list[SummaryRow]:
    """Table of cohort characteristics: mean (SD) or N (%) per row."""
    total = len(conv)
    if total == 0:
        raise DataError("empty cohort")
    rows: list[SummaryRow] = []
    ages = np.array([float(c.age) if c.age is not None else np.nan for c in conv])
    rows.append(_numeric_row("Age", ages))
    rows += _count_rows("Sex", [c.sex for c in conv], {0: "Female", 1: "Male"}, total)
    rows += _count_rows("Education", [c.education for c in conv], EDUCATION_LABELS, total)
    rows += _count_rows("Marital status", [c.marital for c in conv], MARITAL_LABELS, total)
    rows += _count_rows("Household income", [c.income for c in conv], INCOME_LABELS, total)
    rows += _count_rows(
        "Diabetic status", [c.diabetic for c in conv],
        {1: "Has diabetes", 0: "Does not"}, total,
    )
    rows.append(_numeric_row("PHQ-9 score", np.array(
        [float(c.phq9) if c.phq9 is not None else np.nan for c in conv])))
    rows.append(_numeric_row("ADL/IADL score", np.array(
        [float(c.adl_iadl) if c.adl_iadl is not None else np.nan for c in conv])))
    rows.append(_numeric_row("Sleep duration (hours)", fm.column("sleep_duration_mean")))
    rows.append(_numeric_row("Sleep efficiency", fm.column("sleep_efficiency_mean")))
    rows.append(_numeric_row("Sedentary activity (min)", fm.column("sedentary_min_mean")))
    rows.append(_numeric_row("Light activity (min)", fm.column("light_min_mean")))
    rows.append(_numeric_row("Moderate-vigorous activity (min)", fm.column("mvpa_min_mean")))
    return rows


def write_summary_csv(rows: list[SummaryRow], path: str | Path) -> None:
    lines = ["characteristic,value"]
    for r in rows:
        lines.append(f"\"{r.characteristic}\",\"{r.value}\"")
    Path(path).write_text("\n".join(lines) + "\n")


def emit_reports(
    reports: list[EvalReport],
    importances: list[tuple[str, ImportanceReport]],
    out_dir: str | Path,
) -> list[Path]:
    """Write per-model JSON, the pooled AUC CSV, and SVG comparison plots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for report in reports:
        path = out_dir / f"eval_{report.target}_{report.model_type}.json"
        path.write_text(report.to_json())
        written.append(path)

    csv_path = out_dir / "auc_distributions.csv"
    lines = ["target,model_type,repeat,fold,auc"]
    for report in reports:
        for r, row in enumerate(report.aucs):
            for f, value in enumerate(row):
                lines.append(f"{report.target},{report.model_type},{r},{f},{value!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    written.append(csv_path)

    if reports:
        written.append(_plot_auc_comparison(reports, out_dir / "auc_comparison.svg"))
    for tag, imp in importances:
        written.append(_plot_importance(tag, imp, out_dir / f"importance_{tag}.svg"))
    return written


def _deterministic_savefig(fig, path: Path) -> None:
    import matplotlib

    with matplotlib.rc_context({"svg.hashsalt": "cogwear"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def _plot_auc_comparison(reports: list[EvalReport], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    targets = sorted({r.target for r in reports})
    model_types = sorted({r.model_type for r in reports})
    width = 0.8 / max(len(model_types), 1)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for m, model_type in enumerate(model_types):
        xs, ys, errs = [], [], []
        for t, target in enumerate(targets):
            match = [r for r in reports if r.target == target and r.model_type == model_type]
            if not match:
                continue
            r = match[0]
            xs.append(t + (m - (len(model_types) - 1) / 2) * width)
            ys.append(r.mean_auc)
            errs.append([r.mean_auc - r.ci_low, r.ci_high - r.mean_auc])
        if xs:
            ax.bar(xs, ys, width=width * 0.9, label=model_type)
            ax.errorbar(xs, ys, yerr=np.array(errs).T, fmt="none",
                        ecolor="black", capsize=3)
    ax.set_xticks(range(len(targets)))
    ax.set_xticklabels([t.upper() for t in targets])
    ax.set_ylabel("AUC")
    ax.set_ylim(0.4, 1.0)
    ax.legend()
    ax.set_title("Cross-validated AUC by target and model")
    fig.tight_layout()
    _deterministic_savefig(fig, path)
    plt.close(fig)
    return path


def _plot_importance(tag: str, imp: ImportanceReport, path: Path, top_n: int = 15) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    top = imp.single[:top_n][::-1]
    names = [n for n, _ in top]
    values = [v for _, v in top]
    fig, ax = plt.subplots(figsize=(8, 0.35 * len(top) + 1.5))
    ax.barh(range(len(top)), values)
    ax.set_yticks(range(len(top)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("loss change")
    ax.set_title(f"Feature importance: {tag}")
    fig.tight_layout()
    _deterministic_savefig(fig, path)
    plt.close(fig)
    return path
