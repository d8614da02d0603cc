import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogwear.errors import DataError
from cogwear.learn import (
    GbmConfig,
    GbmModel,
    ImputerConfig,
    TreeNode,
    auc,
    fit_gbm,
    fit_logistic,
    knn_impute,
    log_loss,
    model_from_dict,
    model_to_dict,
    predict,
)
from cogwear.learn.importance import loss_change_importance, paired_importance
from cogwear.learn.logistic import _sigmoid
from cogwear.matrix import FeatureMatrix


# ---------------------------------------------------------------------------
# oracles

def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def brute_force_knn_fill(train_values, target_values):
    """Exhaustive nearest-donor search, independent of the vectorized code."""
    d_present = ~np.isnan(train_values)
    mean = np.zeros(train_values.shape[1])
    sd = np.ones(train_values.shape[1])
    for j in range(train_values.shape[1]):
        col = train_values[d_present[:, j], j]
        if len(col):
            mean[j] = col.mean()
            if len(col) > 1 and col.std(ddof=1) > 0:
                sd[j] = col.std(ddof=1)
    out = target_values.copy()
    for r in range(len(target_values)):
        for j in range(target_values.shape[1]):
            if not np.isnan(target_values[r, j]):
                continue
            best_dist, best_donor = math.inf, None
            for d in range(len(train_values)):
                if np.isnan(train_values[d, j]):
                    continue
                shared = (~np.isnan(target_values[r])) & d_present[d]
                if not shared.any():
                    continue
                zt = (target_values[r, shared] - mean[shared]) / sd[shared]
                zd = (train_values[d, shared] - mean[shared]) / sd[shared]
                dist = float(np.sum((zt - zd) ** 2))
                if dist < best_dist:
                    best_dist, best_donor = dist, d
            if best_donor is not None:
                out[r, j] = train_values[best_donor, j]
            else:
                col = train_values[d_present[:, j], j]
                out[r, j] = np.median(col) if len(col) else mean[j]
    return out


def _fm(values, columns=None):
    values = np.asarray(values, dtype=float)
    columns = columns or [f"c{j}" for j in range(values.shape[1])]
    return FeatureMatrix(
        ids=[f"r{i}" for i in range(len(values))],
        columns=columns,
        values=values,
        kinds={c: "numeric" for c in columns},
    )


# ---------------------------------------------------------------------------
# KNN imputation

def test_knn_hand_example():
    train = _fm([[1.0, 2.0], [5.0, 9.0]])
    target = _fm([[1.1, np.nan]])
    out = knn_impute(train, target)
    assert out.values[0, 1] == 2.0


def test_knn_identity_when_complete():
    train = _fm([[1.0, 2.0], [3.0, 4.0]])
    target = _fm([[5.0, 6.0]])
    out = knn_impute(train, target)
    assert np.array_equal(out.values, target.values)


def test_knn_matches_brute_force(rng):
    for _ in range(20):
        train = rng.random((20, 5)) * 10
        train[rng.random((20, 5)) < 0.1] = np.nan
        target = rng.random((8, 5)) * 10
        target[rng.random((8, 5)) < 0.15] = np.nan
        out = knn_impute(_fm(train), _fm(target))
        expected = brute_force_knn_fill(train, target)
        assert np.allclose(out.values, expected, equal_nan=True)


def test_knn_never_alters_observed_cells(rng):
    train = rng.random((15, 4))
    target = rng.random((6, 4))
    mask = rng.random((6, 4)) < 0.3
    target_missing = target.copy()
    target_missing[mask] = np.nan
    out = knn_impute(_fm(train), _fm(target_missing))
    assert np.array_equal(out.values[~mask], target[~mask])
    assert not np.isnan(out.values).any()


def test_knn_all_donors_missing_column_warns(caplog):
    train = _fm([[1.0, np.nan], [2.0, np.nan]])
    target = _fm([[1.5, np.nan]])
    with caplog.at_level("WARNING"):
        out = knn_impute(train, target)
    assert out.values[0, 1] == 0.0     # donor mean of an empty column is 0
    assert "every donor" in caplog.text


def test_knn_no_shared_columns_falls_back_to_median():
    train = _fm([[np.nan, 1.0], [np.nan, 3.0], [np.nan, 5.0]])
    target = _fm([[7.0, np.nan]])      # column 0 observed, but no donor has it
    out = knn_impute(train, target)
    assert out.values[0, 1] == 3.0


def test_imputer_config_validation():
    with pytest.raises(ValueError):
        ImputerConfig(k=0)


# ---------------------------------------------------------------------------
# logistic regression

def test_intercept_only_closed_form():
    y = np.array([1, 0, 0, 0] * 6, dtype=float)
    model = fit_logistic(np.zeros((24, 0)), y)
    assert model.intercept == pytest.approx(math.log(0.25 / 0.75), abs=1e-6)
    assert model.converged


def test_symmetric_noise_coefficient_zero(rng):
    x1 = rng.normal(size=60)
    z = rng.normal(size=60)
    x = np.column_stack([np.r_[x1, -x1], np.r_[z, z]])
    y = np.r_[np.ones(60), np.zeros(60)]
    model = fit_logistic(x, y)
    assert abs(model.coef[1]) < 1e-6
    assert abs(model.intercept) < 1e-6


def test_separable_data_flags_nonconvergence():
    x = np.linspace(-2, 2, 30).reshape(-1, 1)
    y = (x[:, 0] > 0).astype(float)
    model = fit_logistic(x, y)
    assert not model.converged


def test_constant_labels_error():
    with pytest.raises(DataError):
        fit_logistic(np.random.default_rng(0).random((10, 2)), np.ones(10))


def test_duplicated_rows_same_fit(rng):
    x = rng.normal(size=(40, 3))
    y = (rng.random(40) < _sigmoid(x[:, 0])).astype(float)
    m1 = fit_logistic(x, y)
    m2 = fit_logistic(np.vstack([x, x]), np.r_[y, y])
    assert np.allclose(m1.coef, m2.coef, atol=1e-8)
    assert m1.intercept == pytest.approx(m2.intercept, abs=1e-8)


# ---------------------------------------------------------------------------
# gradient boosted trees

def test_perfect_stump_separates():
    x = np.r_[np.zeros(20), np.ones(20)].reshape(-1, 1)
    y = np.r_[np.zeros(20), np.ones(20)]
    model = fit_gbm(x, y, config=GbmConfig(iterations=10, max_depth=1, seed=0))
    assert auc(predict(model, x), y) == 1.0


def test_train_loss_nonincreasing_full_sample():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(80, 4))
        y = (rng.random(80) < _sigmoid(x[:, 0] - x[:, 1])).astype(float)
        model = fit_gbm(x, y, config=GbmConfig(
            iterations=60, max_depth=3, subsample=1.0, seed=seed))
        assert np.all(np.diff(model.train_losses) <= 1e-12)


def test_early_stopping_on_noise():
    stopped_early = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=(120, 5))
        y = (rng.random(120) < 0.5).astype(float)
        model = fit_gbm(x[:80], y[:80], x[80:], y[80:], config=GbmConfig(
            iterations=400, max_depth=3, early_stopping_patience=50, seed=seed))
        if len(model.trees) < 400:
            stopped_early += 1
    assert stopped_early >= 18


def test_empty_validation_set_error():
    x = np.random.default_rng(0).random((20, 2))
    y = np.r_[np.zeros(10), np.ones(10)]
    with pytest.raises(DataError):
        fit_gbm(x, y, np.empty((0, 2)), np.empty(0))


def test_zero_trees_predicts_prevalence():
    model = GbmModel(
        feature_names=["a"], trees=[], base_score=math.log(0.25 / 0.75),
        best_iteration=0, config=GbmConfig(),
    )
    probs = predict(model, np.array([[1.0], [2.0]]))
    assert np.allclose(probs, 0.25)


def test_hand_built_ensemble_prediction():
    stump = lambda thr, lo, hi: TreeNode(
        feature=0, threshold=thr, left_fraction=0.5,
        left=TreeNode(value=lo), right=TreeNode(value=hi),
    )
    trees = [stump(0.5, -1.0, 2.0), stump(1.5, 0.5, -0.5), stump(-0.5, 3.0, 0.0)]
    model = GbmModel(feature_names=["a"], trees=trees, base_score=0.1,
                     best_iteration=3, config=GbmConfig(learning_rate=0.2))
    x = np.array([[0.0], [1.0]])
    # row 0: left/left/right -> -1.0 + 0.5 + 0.0 = -0.5
    # row 1: right/left/right -> 2.0 + 0.5 + 0.0 = 2.5
    expected = _sigmoid(np.array([0.1 + 0.2 * -0.5, 0.1 + 0.2 * 2.5]))
    assert np.allclose(predict(model, x), expected)


def test_predict_column_mismatch_error():
    model = GbmModel(feature_names=["a", "b"], trees=[], base_score=0.0,
                     best_iteration=0, config=GbmConfig())
    with pytest.raises(DataError):
        predict(model, np.zeros((3, 3)))


def test_monotone_rescaling_invariance(rng):
    x = rng.normal(size=(80, 4))
    y = (rng.random(80) < _sigmoid(1.5 * x[:, 0] - x[:, 2])).astype(float)
    cfg = GbmConfig(iterations=40, max_depth=3, subsample=0.8, seed=5, max_bins=16)
    transformed = x.copy()
    transformed[:, 0] = np.exp(x[:, 0])          # strictly increasing rescale
    m1 = fit_gbm(x, y, config=cfg)
    m2 = fit_gbm(transformed, y, config=cfg)
    assert np.array_equal(predict(m1, x), predict(m2, transformed))


def test_gbm_serialization_round_trip(rng):
    x = rng.normal(size=(50, 3))
    y = (rng.random(50) < _sigmoid(x[:, 0])).astype(float)
    model = fit_gbm(x, y, config=GbmConfig(iterations=15, max_depth=2, seed=1))
    clone = model_from_dict(model_to_dict(model))
    assert np.array_equal(predict(model, x), predict(clone, x))


def test_logistic_serialization_round_trip(rng):
    x = rng.normal(size=(40, 2))
    y = (rng.random(40) < 0.5).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    model = fit_logistic(x, y, ["u", "v"])
    clone = model_from_dict(model_to_dict(model))
    assert np.allclose(predict(model, x), predict(clone, x))


# ---------------------------------------------------------------------------
# AUC

def test_auc_hand_example():
    scores = np.array([0.9, 0.8, 0.7, 0.85])
    labels = np.array([1, 1, 0, 0])
    assert auc(scores, labels) == 0.75
    assert brute_force_auc(scores, labels) == 0.75


def test_auc_all_ties():
    assert auc(np.full(10, 0.3), np.r_[np.ones(4), np.zeros(6)]) == 0.5


def test_auc_label_flip_antisymmetry(rng):
    scores = rng.random(30)
    labels = (rng.random(30) < 0.4).astype(int)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert auc(scores, labels) == pytest.approx(1.0 - auc(scores, 1 - labels))


def test_auc_single_class_error():
    with pytest.raises(DataError):
        auc(np.array([0.1, 0.2]), np.array([1, 1]))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_auc_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    scores = rng.integers(0, 6, size=n).astype(float)  # heavy ties on purpose
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert auc(scores, labels) == brute_force_auc(scores, labels)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_auc_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(25)
    labels = rng.integers(0, 2, size=25)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert auc(np.exp(3 * scores), labels) == auc(scores, labels)


# ---------------------------------------------------------------------------
# importance

def _signal_model(rng, n=400, strong=2.5, weak=0.6, seed=0):
    x = rng.normal(size=(n, 4))
    logit = strong * x[:, 0] + weak * x[:, 1]
    y = (rng.random(n) < _sigmoid(logit)).astype(float)
    model = fit_gbm(x[: n // 2], y[: n // 2], config=GbmConfig(
        iterations=80, max_depth=3, seed=seed),
        feature_names=["strong", "weak", "noise1", "noise2"])
    return model, x[n // 2:], y[n // 2:]


def test_unused_feature_importance_exactly_zero():
    x = np.r_[np.zeros(20), np.ones(20)].reshape(-1, 1)
    x = np.column_stack([x, np.zeros(40)])   # constant second feature: unsplittable
    y = np.r_[np.zeros(20), np.ones(20)]
    model = fit_gbm(x, y, config=GbmConfig(iterations=5, max_depth=2, seed=0),
                    feature_names=["real", "dead"])
    report = loss_change_importance(model, x, y)
    assert dict(report.single)["dead"] == 0.0


def test_single_stump_importance_positive():
    x = np.r_[np.zeros(20), np.ones(20)].reshape(-1, 1)
    y = np.r_[np.zeros(20), np.ones(20)]
    model = fit_gbm(x, y, config=GbmConfig(iterations=1, max_depth=1, seed=0))
    report = loss_change_importance(model, x, y)
    assert report.single[0][1] > 0


def test_strong_feature_ranks_first():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model, xe, ye = _signal_model(rng, seed=seed)
        report = loss_change_importance(model, xe, ye)
        if report.single[0][0] == "strong":
            hits += 1
    assert hits >= 19


def test_xor_pair_synergy_dominates_noise_pairs():
    # jointly neutralizing an interacting pair costs about as much as either
    # member alone, so its synergy is large in magnitude (negative) while
    # non-interacting pairs sit near zero
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(50 + seed)
        n = 400
        a = (rng.random(n) < 0.5).astype(float)
        b = (rng.random(n) < 0.5).astype(float)
        noise = rng.normal(size=(n, 2))
        y = np.logical_xor(a, b).astype(float)
        flip = rng.random(n) < 0.05
        y[flip] = 1 - y[flip]
        x = np.column_stack([a, b, noise])
        model = fit_gbm(x[:300], y[:300], config=GbmConfig(
            iterations=100, max_depth=3, seed=seed),
            feature_names=["a", "b", "n1", "n2"])
        report = paired_importance(model, x[300:], y[300:])
        ranked = {frozenset((p[0], p[1])): p[2] for p in report.pairs}
        xor_val = ranked.get(frozenset(("a", "b")), 0.0)
        others = [v for k, v in ranked.items() if k != frozenset(("a", "b"))]
        if others and abs(xor_val) > max(abs(v) for v in others):
            hits += 1
    assert hits >= 18


def test_additive_synergy_within_permutation_band(rng):
    n = 500
    x = rng.normal(size=(n, 4))
    y = (rng.random(n) < _sigmoid(1.2 * x[:, 0] + 1.2 * x[:, 1])).astype(float)
    cfg = GbmConfig(iterations=60, max_depth=2, seed=0)
    names = ["f0", "f1", "n0", "n1"]

    def synergy(labels, seed):
        model = fit_gbm(x[:350], labels[:350],
                        config=GbmConfig(iterations=60, max_depth=2, seed=seed),
                        feature_names=names)
        report = paired_importance(model, x[350:], labels[350:])
        return {frozenset((p[0], p[1])): p[2] for p in report.pairs}

    real = synergy(y, 0).get(frozenset(("f0", "f1")), 0.0)
    band = []
    for p_seed in range(10):
        perm = np.random.default_rng(p_seed).permutation(y)
        vals = synergy(perm, p_seed + 1)
        band.extend(abs(v) for v in vals.values())
    assert abs(real) <= max(band) + 0.02


def test_unused_pair_zero_synergy():
    x = np.column_stack([
        np.r_[np.zeros(20), np.ones(20)],
        np.zeros(40),
        np.zeros(40),
    ])
    y = np.r_[np.zeros(20), np.ones(20)]
    model = fit_gbm(x, y, config=GbmConfig(iterations=3, max_depth=2, seed=0),
                    feature_names=["real", "dead1", "dead2"])
    report = paired_importance(model, x, y)
    pairs = {frozenset((p[0], p[1])): p[2] for p in report.pairs}
    assert pairs[frozenset(("dead1", "dead2"))] == 0.0
