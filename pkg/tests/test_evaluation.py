import datetime as dt
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indfind.cohort import Cohort
from indfind.embedding import EmbeddingMatrix
from indfind.errors import ConfigError, DataError
from indfind.evaluation import (SCORE_TABLE, AblationRow, EvaluationReport, PredictionTaskSpec,
                                PredictiveReport, TaskResult, ValidationSet, auc, bucket_score,
                                build_prediction_features, build_task_cohort, evaluate_ranking,
                                if_score, logistic_loss_grad, predict_logistic, predictive_eval,
                                project_2d, recall_at_k, train_logistic, write_ablation,
                                write_projection, write_report)
from indfind.ranking import rank_from_similarities

import oracles
from conftest import make_patient, simple_vocab


def ranked_with(order):
    """RankedList whose final positions follow ``order`` (list of feature ids)."""
    ids = np.sort(order)
    sims = np.empty((len(ids), 1))
    sims[np.searchsorted(ids, order), 0] = np.linspace(1, 0, len(ids))
    return rank_from_similarities(sims, ids, [10_000])


def place(fid, position, n=400):
    order = [i for i in range(n) if i != fid]
    order.insert(position - 1, fid)
    return ranked_with(order)


# ---------------------------------------------------------------- IF score


@pytest.mark.parametrize("position,pos_score,neg_score", [
    (1, 5, -0.5), (30, 5, -0.5), (31, 4, -0.4), (60, 4, -0.4), (61, 3, -0.3), (90, 3, -0.3),
    (91, 2, -0.2), (120, 2, -0.2), (121, 1, -0.1), (150, 1, -0.1), (151, 0, 0), (300, 0, 0)])
def test_score_buckets(position, pos_score, neg_score):
    ranked = place(7, position)
    assert if_score(ranked, ValidationSet({7}, set())) == pos_score
    assert if_score(ranked, ValidationSet(set(), {7})) == neg_score


def test_absent_validation_scores_zero():
    assert bucket_score(None, True) == 0.0
    assert if_score(ranked_with([1, 2, 3]), ValidationSet({99}, {98})) == 0.0


def test_score_is_exact_sum():
    ranked = ranked_with(list(range(200)))
    # negatives at 1, 31, 61, 91, 121 (0-based ids 0, 30, ...)
    v = ValidationSet(set(), {0, 30, 60, 90, 120})
    assert if_score(ranked, v) == -1.5


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 199), min_size=1, max_size=12, unique=True), st.data())
def test_score_additive_and_monotone(members, data):
    ranked = ranked_with(list(range(200)))
    split = data.draw(st.integers(0, len(members)))
    pos, neg = set(members[:split]), set(members[split:])
    total = if_score(ranked, ValidationSet(pos, neg))
    parts = [if_score(ranked, ValidationSet({m}, set())) for m in pos] + \
            [if_score(ranked, ValidationSet(set(), {m})) for m in neg]
    assert total == pytest.approx(sum(parts), abs=1e-12)
    # moving any validation to a better position: positives never lose, negatives never gain
    p1 = data.draw(st.integers(1, 400))
    p0 = data.draw(st.integers(p1, 400))
    assert bucket_score(p1, True) >= bucket_score(p0, True)
    assert bucket_score(p1, False) <= bucket_score(p0, False)


def test_validation_sets_disjoint():
    with pytest.raises(DataError):
        ValidationSet({1, 2}, {2})


# ---------------------------------------------------------------- recall


def test_recall_examples():
    ranked = ranked_with(list(range(300)))
    assert recall_at_k(ranked, {0, 10, 20, 60, 250}, 50) == 0.6
    assert recall_at_k(ranked, {0, 10, 20, 60, 250}, 300) == 1.0
    assert recall_at_k(ranked, {5, 150, 151, 152, 153}, 100) == 0.2
    with pytest.raises(DataError):
        recall_at_k(ranked, set(), 10)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=20, unique=True))
def test_recall_monotone_in_k(members):
    ranked = ranked_with(list(range(300)))
    values = [recall_at_k(ranked, members, k) for k in (1, 10, 50, 100, 200, 300)]
    assert values == sorted(values)


def test_evaluate_and_write_report(tmp_path):
    ranked = ranked_with(list(range(300)))
    report = evaluate_ranking(ranked, ValidationSet({0, 1, 2, 200, 299}, {100, 250}))
    assert report.recall[("pos", 50)] == 0.6 and report.recall[("neg", 200)] == 0.5
    report.predictive = PredictiveReport((TaskResult("T", 0.1, 0.7, 0.68, 10, 5),))
    write_report(report, tmp_path / "e.txt")
    text = (tmp_path / "e.txt").read_text()
    assert "if_score = 14.8" in text and "recall@50.pos = 0.6" in text
    assert "target,prevalence,count_auc,embedding_auc\nT,0.1,0.68,0.7" in text


# ---------------------------------------------------------------- AUC


def test_auc_examples():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]) == 0.75
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=12))
def test_auc_equals_pairwise_enumeration(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    assert auc(scores, labels) == oracles.pairwise_auc(scores, labels)
    # strictly monotone transform
    assert auc(np.exp(3 * np.array(scores)), labels) == auc(scores, labels)


# ---------------------------------------------------------------- logistic


def test_logistic_gradient_matches_finite_differences(rng):
    X = np.hstack([rng.standard_normal((20, 4)), np.ones((20, 1))])
    y = (rng.random(20) < 0.4).astype(float)
    for _ in range(5):
        w = rng.standard_normal(5)
        _, g = logistic_loss_grad(w, X, y, 0.7)
        eps = 1e-6
        fd = np.array([(logistic_loss_grad(w + eps * e, X, y, 0.7)[0]
                        - logistic_loss_grad(w - eps * e, X, y, 0.7)[0]) / (2 * eps)
                       for e in np.eye(5)])
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)


def test_logistic_descends_and_validates(rng):
    X, y = np.array([[1.0], [-1.0]]), np.array([1.0, 0.0])
    w = train_logistic(X, y, l2=1.0)
    A = np.hstack([X, np.ones((2, 1))])
    assert logistic_loss_grad(w, A, y, 1.0)[0] < logistic_loss_grad(np.zeros(2), A, y, 1.0)[0]
    assert predict_logistic(X, w)[0] > predict_logistic(X, w)[1]
    with pytest.raises(ValueError):
        train_logistic(X, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        train_logistic(np.array([[np.nan], [1.0]]), y)


def test_logistic_converges_to_stationary_point(rng):
    X = rng.standard_normal((200, 3))
    y = (X @ [1.0, -2.0, 0.5] + 0.3 * rng.standard_normal(200) > 0).astype(float)
    w = train_logistic(X, y, l2=1.0, max_iter=5000, tol=1e-8)
    _, g = logistic_loss_grad(w, np.hstack([X, np.ones((200, 1))]), y, 1.0)
    assert np.linalg.norm(g) <= 1e-8
    assert auc(predict_logistic(X, w), y) > 0.9


# ---------------------------------------------------------------- prediction features


def test_prediction_features_sum_rows():
    vocab = simple_vocab(("A01", "B02"))
    vecs = np.arange(len(vocab) * 2, dtype=float).reshape(-1, 2)
    emb = EmbeddingMatrix(vecs, np.ones(2))
    index = dt.date(2019, 1, 1)
    demo = vecs[vocab.id("gender_F")] + vecs[vocab.id("age_48-57")]  # born 1970, age 49 in 2019
    one = make_patient(events=[(300, "A01")])
    assert np.array_equal(build_prediction_features(one, index, emb, vocab),
                          vecs[vocab.id("A01")] + demo)
    two = make_patient(events=[(300, "A01"), (310, "A01"), (10, "B02")])  # B02 outside 180 days
    assert np.array_equal(build_prediction_features(two, index, emb, vocab),
                          2 * vecs[vocab.id("A01")] + demo)
    with pytest.raises(DataError):
        build_prediction_features(make_patient(events=[(10, "A01")]), index, emb, vocab)


def _task_cohort(n=400, prevalence=0.1, seed=0):
    """Cases get B02 a few months before target C03; controls get noise only."""
    rng = np.random.default_rng(seed)
    pats = []
    for i in range(n):
        case = rng.random() < prevalence
        evs = [(int(d), "A01") for d in rng.integers(0, 1500, 6)]
        if case:
            onset = int(rng.integers(400, 1500))
            evs += [(onset - 30, "B02"), (onset, "C03")]
        pats.append(make_patient(f"P{i:04d}", 1960 + i % 30, "MF"[i % 2], events=evs))
    return Cohort(tuple(pats), ())


def test_task_cohort_stratified_and_deterministic():
    vocab = simple_vocab()
    cohort = _task_cohort()
    spec = PredictionTaskSpec(vocab.id("C03"), cohort_size=200, holdout_size=50, seed=3)
    train, hold = build_task_cohort(cohort, spec, vocab)
    assert len(train) + len(hold) == 200 and len(hold) == 50
    with pytest.warns(RuntimeWarning):
        everyone = sum(build_task_cohort(cohort, PredictionTaskSpec(vocab.id("C03"), cohort_size=10_000, seed=3,
                                                                    holdout_size=10), vocab), [])
    prevalence = np.mean([e.label for e in everyone])
    n_case = sum(e.label for e in train + hold)
    assert n_case == round(200 * prevalence)
    assert sum(e.label for e in hold) == round(n_case * 50 / 200)
    assert (train, hold) == build_task_cohort(cohort, spec, vocab)
    assert all(e.index_day == _first("C03", cohort.patients[e.patient_index]) - 1
               for e in train if e.label)


def _first(code, patient):
    d = min(e.date for e in patient.events if e.code == code)
    return d.toordinal() - dt.date(1970, 1, 1).toordinal()


def test_task_cohort_errors_and_scaling():
    vocab = simple_vocab()
    cohort = _task_cohort(100)
    with pytest.raises(DataError):
        build_task_cohort(cohort, PredictionTaskSpec(vocab.id("D04") if "D04" in vocab.names
                                                     else vocab.id("A01") * 0 + vocab.id("gender_M"),
                                                     cohort_size=50, holdout_size=10), vocab)
    with pytest.warns(RuntimeWarning, match="scaling"):
        train, hold = build_task_cohort(cohort, PredictionTaskSpec(vocab.id("C03")), vocab)
    assert len(train) + len(hold) <= 100
    with pytest.raises(ConfigError):
        PredictionTaskSpec(0, holdout_size=10, cohort_size=10)
    with pytest.raises(ConfigError):
        PredictionTaskSpec(0, lookback=0)


def test_identity_embedding_gives_identical_aucs():
    vocab = simple_vocab()
    cohort = _task_cohort(600, 0.15, seed=1)
    emb = EmbeddingMatrix(np.eye(len(vocab)), np.ones(len(vocab)))
    spec = PredictionTaskSpec(vocab.id("C03"), cohort_size=500, holdout_size=150, seed=2)
    report = predictive_eval(cohort, emb, vocab, [spec])
    t = report.tasks[0]
    assert t.auc_embedding == t.auc_counts
    assert t.auc_counts > 0.8
    with pytest.raises(ConfigError):
        predictive_eval(cohort, emb, vocab, [])


# ---------------------------------------------------------------- projection and ablation


def test_projection_of_2d_data_is_rotation(rng):
    x = rng.standard_normal((30, 2))
    x -= x.mean(axis=0)
    coords = project_2d(x).coords
    d_in = np.linalg.norm(x[:, None] - x[None], axis=-1)
    d_out = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
    assert np.allclose(d_in, d_out, atol=1e-9)


def test_projection_separates_clusters(rng):
    a = rng.standard_normal((40, 10)) * 0.2 + 3
    b = rng.standard_normal((40, 10)) * 0.2 - 3
    coords = project_2d(np.vstack([a, b])).coords
    ca, cb = coords[:40], coords[40:]
    radius = max(np.linalg.norm(ca - ca.mean(0), axis=1).max(), np.linalg.norm(cb - cb.mean(0), axis=1).max())
    assert np.linalg.norm(ca.mean(0) - cb.mean(0)) > radius
    var = coords.var(axis=0)
    assert var[0] >= var[1]


def test_projection_degenerate_and_export(tmp_path):
    assert np.all(project_2d(np.ones((5, 3))).coords == 0)
    with pytest.raises(ConfigError):
        project_2d(np.ones((5, 1)))
    vocab = simple_vocab()
    proj = project_2d(np.random.default_rng(0).standard_normal((len(vocab), 4)), vocab)
    assert proj.chapters[vocab.id("A01")] == "I" and proj.chapters[vocab.id("gender_M")] is None
    write_projection(proj, vocab, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("feature_name,chapter,x,y\nA01,I,")


def test_ablation_export(tmp_path):
    write_ablation([AblationRow(1.0, 10, 3, 0.6)], tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines() == [
        "fraction,n_patients,positives_in_top_100,recall_at_100", "1.0,10,3,0.6"]
