"""Evaluation of ranked indication lists and of the embeddings themselves."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import warnings
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from .cohort import Cohort
from .embedding import EmbeddingMatrix, SppmiConfig, _as_encoded, embed, truncated_svd
from .errors import ConfigError, DataError, NumericError
from .features import FeatureKind, FeatureVocabulary
from .ranking import RankedList, derive_seed, rank_indications

log = logging.getLogger(__name__)

# (last position of bucket, positive score, negative score)
SCORE_TABLE = (
    (30, 5, -0.5),
    (60, 4, -0.4),
    (90, 3, -0.3),
    (120, 2, -0.2),
    (150, 1, -0.1),
)
RECALL_KS = (50, 100, 200)


@dataclass(frozen=True)
class ValidationSet:
    positives: frozenset[int]
    negatives: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "negatives", frozenset(self.negatives))
        if self.positives & self.negatives:
            raise DataError("positive and negative validations overlap")

    @classmethod
    def from_vocabulary(cls, vocab: FeatureVocabulary) -> "ValidationSet":
        return cls(frozenset(vocab.positives), frozenset(vocab.negatives))


def bucket_score(position: int | None, positive: bool, table=SCORE_TABLE) -> float:
    """Score of one validation at a 1-based list position (None = absent)."""
    if position is None:
        return 0.0
    for last, pos_score, neg_score in table:
        if position <= last:
            return float(pos_score if positive else neg_score)
    return 0.0


def if_score(ranked: RankedList, validations: ValidationSet, table=SCORE_TABLE) -> float:
    """Indication-finding score: bucketed rewards for positives, penalties for negatives."""
    pos = ranked.positions()
    total = Decimal(0)
    for members, positive in ((validations.positives, True), (validations.negatives, False)):
        for fid in members:
            total += Decimal(str(bucket_score(pos.get(fid), positive, table)))
    return float(total)


def recall_at_k(ranked: RankedList, members: Iterable[int], k: int) -> float:
    members = set(members)
    if not members:
        raise DataError("empty validation set")
    pos = ranked.positions()
    return sum(1 for m in members if pos.get(m, k + 1) <= k) / len(members)


# --------------------------------------------------------------------------
# predictive task


@dataclass(frozen=True)
class PredictionTaskSpec:
    target: int
    lookback: int = 180
    horizon: int = 1
    cohort_size: int = 50_000
    holdout_size: int = 10_000
    seed: int = 0
    permute_labels: bool = False

    def __post_init__(self):
        if self.lookback <= 0:
            raise ConfigError("lookback must be positive")
        if not 0 < self.holdout_size < self.cohort_size:
            raise ConfigError("holdout_size must be positive and below cohort_size")


@dataclass(frozen=True)
class TaskExample:
    patient_index: int
    index_day: int  # days since 1970-01-01
    label: int


def _window_counts(enc, vocab, i, index_day, lookback) -> np.ndarray | None:
    """Occurrence counts of features in [index - lookback, index), demographics once."""
    a, b = enc.ptr[i], enc.ptr[i + 1]
    days, feats = enc.days[a:b], enc.feats[a:b]
    sel = (days >= index_day - lookback) & (days < index_day)
    if not sel.any():
        return None
    vec = np.bincount(feats[sel], minlength=len(vocab)).astype(float)
    year = (dt.date(1970, 1, 1) + dt.timedelta(days=int(index_day))).year
    vec[enc.gender_feat[i]] += 1
    vec[vocab.age_feature(year - int(enc.birth_year[i]))] += 1
    return vec


def build_prediction_features(patient, index_date: dt.date, embeddings: EmbeddingMatrix,
                              vocab: FeatureVocabulary, lookback: int = 180) -> np.ndarray:
    """Sum of embedding rows over the mapped events in the look-back window.

    Each occurrence counts once; gender and age bucket (at ``index_date``) are
    added once.  Raises :class:`DataError` when the window holds no mapped event.
    """
    enc = _as_encoded(Cohort((patient,), ()), vocab)
    day = index_date.toordinal() - dt.date(1970, 1, 1).toordinal()
    counts = _window_counts(enc, vocab, 0, day, lookback)
    if counts is None:
        raise DataError(f"{patient.patient_id}: no mapped events in the look-back window")
    return counts @ embeddings.vectors


def _stratified_pick(rng, idx: np.ndarray, n: int) -> np.ndarray:
    return np.sort(rng.choice(idx, size=n, replace=False)) if n < len(idx) else idx


def build_task_cohort(cohort, spec: PredictionTaskSpec, vocab: FeatureVocabulary):
    """Stratified (train, holdout) examples for predicting ``spec.target``.

    Cases are indexed ``horizon`` days before their first target diagnosis and
    discarded if observed for less than ``lookback`` days before it.  Controls
    are indexed on a uniform random day of their observed span.  Patients with
    an empty look-back window are dropped before sampling.
    """
    enc = _as_encoded(cohort, vocab)
    rng = np.random.default_rng(spec.seed)
    examples = []
    for i in range(enc.n_patients):
        a, b = enc.ptr[i], enc.ptr[i + 1]
        if a == b:
            continue
        days, feats = enc.days[a:b], enc.feats[a:b]
        hits = days[feats == spec.target]
        if len(hits):
            onset = int(hits.min())
            if onset - int(days[0]) < spec.lookback:
                continue
            examples.append(TaskExample(i, onset - spec.horizon, 1))
        else:
            examples.append(TaskExample(i, int(rng.integers(days[0], days[-1] + 1)), 0))
    examples = [e for e in examples
                if _window_counts(enc, vocab, e.patient_index, e.index_day, spec.lookback) is not None]
    labels = np.array([e.label for e in examples], dtype=int)
    if labels.sum() == 0:
        raise DataError("no eligible cases for the prediction target")
    if labels.sum() == len(labels):
        raise DataError("no eligible controls for the prediction target")

    total, holdout = spec.cohort_size, spec.holdout_size
    if len(examples) < total:
        scale = len(examples) / total
        total, holdout = len(examples), max(1, int(round(holdout * scale)))
        warnings.warn(f"only {len(examples)} eligible patients; scaling task to {total} "
                      f"with holdout {holdout}", RuntimeWarning, stacklevel=2)
    prevalence = labels.mean()
    case_idx, ctrl_idx = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    n_case = min(len(case_idx), max(1, int(round(prevalence * total))))
    n_ctrl = min(len(ctrl_idx), total - n_case)
    cases = _stratified_pick(rng, case_idx, n_case)
    ctrls = _stratified_pick(rng, ctrl_idx, n_ctrl)
    h_case = int(round(n_case * holdout / total))
    h_ctrl = holdout - h_case
    cases, ctrls = rng.permutation(cases), rng.permutation(ctrls)
    hold = np.sort(np.concatenate([cases[:h_case], ctrls[:h_ctrl]]))
    train = np.sort(np.concatenate([cases[h_case:], ctrls[h_ctrl:]]))
    return [examples[j] for j in train], [examples[j] for j in hold]


def task_matrix(cohort, examples: Sequence[TaskExample], vocab: FeatureVocabulary,
                lookback: int = 180) -> sp.csr_matrix:
    """Occurrence-count feature matrix (examples x vocabulary)."""
    enc = _as_encoded(cohort, vocab)
    rows = [_window_counts(enc, vocab, e.patient_index, e.index_day, lookback) for e in examples]
    return sp.csr_matrix(np.vstack(rows)) if rows else sp.csr_matrix((0, len(vocab)))


def _design(X):
    return sp.hstack([X, np.ones((X.shape[0], 1))]).tocsr() if sp.issparse(X) else \
        np.hstack([X, np.ones((X.shape[0], 1))])


def logistic_loss_grad(w: np.ndarray, X, y: np.ndarray, l2: float):
    """Mean log-loss plus ``l2 / (2n) * |w|^2`` (intercept, the last weight, unpenalised)."""
    n = X.shape[0]
    z = X @ w
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    p = np.exp(-np.logaddexp(0.0, -z))
    grad = X.T @ (p - y) / n
    wp = w.copy()
    wp[-1] = 0.0
    loss += 0.5 * l2 * (wp @ wp) / n
    grad = np.asarray(grad).ravel() + l2 * wp / n
    return float(loss), grad


def train_logistic(X, y, l2: float = 1.0, max_iter: int = 2000, tol: float = 1e-6) -> np.ndarray:
    """L2-regularised logistic regression by gradient descent with backtracking.

    Starts from zero weights and stops when the gradient norm drops below
    ``tol`` or after ``max_iter`` steps.  Returns ``d + 1`` weights, the last
    being the intercept.
    """
    y = np.asarray(y, dtype=float)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be binary")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    data = X.data if sp.issparse(X) else np.asarray(X)
    if not np.all(np.isfinite(data)):
        raise ValueError("features must be finite")
    A = _design(X if sp.issparse(X) else np.asarray(X, dtype=float))
    w = np.zeros(A.shape[1])
    loss, grad = logistic_loss_grad(w, A, y, l2)
    step = 1.0
    for _ in range(max_iter):
        gnorm2 = grad @ grad
        if np.sqrt(gnorm2) <= tol:
            break
        while True:
            cand = w - step * grad
            new_loss, new_grad = logistic_loss_grad(cand, A, y, l2)
            if not np.isfinite(new_loss):
                raise NumericError("non-finite logistic loss; check feature scaling")
            if new_loss <= loss - 0.5 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                return w
        w, loss, grad = cand, new_loss, new_grad
        step *= 2.0
    return w


def predict_logistic(X, w: np.ndarray) -> np.ndarray:
    return np.asarray(X @ w[:-1]).ravel() + w[-1]


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(case > control) + P(tie) / 2, via average ranks."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


@dataclass(frozen=True)
class TaskResult:
    target: str
    prevalence: float
    auc_embedding: float
    auc_counts: float
    n_train: int
    n_holdout: int


@dataclass(frozen=True)
class PredictiveReport:
    tasks: tuple[TaskResult, ...]

    @property
    def median_auc_embedding(self) -> float:
        return float(np.median([t.auc_embedding for t in self.tasks]))

    @property
    def median_auc_counts(self) -> float:
        return float(np.median([t.auc_counts for t in self.tasks]))


def predictive_eval(cohort, embeddings: EmbeddingMatrix, vocab: FeatureVocabulary,
                    tasks: Sequence[PredictionTaskSpec], l2: float = 1.0,
                    max_iter: int = 2000) -> PredictiveReport:
    """Holdout AUC of logistic models on embedding-sum vs occurrence-count features.

    Both feature sets are left unscaled and use the same examples.
    """
    if not tasks:
        raise ConfigError("no prediction tasks")
    enc = _as_encoded(cohort, vocab)
    results = []
    for spec in tasks:
        train, hold = build_task_cohort(enc, spec, vocab)
        y_tr = np.array([e.label for e in train])
        y_ho = np.array([e.label for e in hold])
        if spec.permute_labels:
            rng = np.random.default_rng(derive_seed(spec.seed, "permute"))
            y_tr, y_ho = rng.permutation(y_tr), rng.permutation(y_ho)
        Xc_tr = task_matrix(enc, train, vocab, spec.lookback)
        Xc_ho = task_matrix(enc, hold, vocab, spec.lookback)
        Xe_tr = np.asarray(Xc_tr @ embeddings.vectors)
        Xe_ho = np.asarray(Xc_ho @ embeddings.vectors)
        w_c = train_logistic(Xc_tr, y_tr, l2, max_iter)
        w_e = train_logistic(Xe_tr, y_tr, l2, max_iter)
        prevalence = float(np.concatenate([y_tr, y_ho]).mean())
        results.append(TaskResult(vocab[spec.target].name, prevalence,
                                  auc(predict_logistic(Xe_ho, w_e), y_ho),
                                  auc(predict_logistic(Xc_ho, w_c), y_ho), len(train), len(hold)))
    return PredictiveReport(tuple(results))


# --------------------------------------------------------------------------
# cohort-size ablation


@dataclass(frozen=True)
class AblationRow:
    fraction: float
    n_patients: int
    positives_in_top: int
    recall: float


def ablation_cohort_size(cohort, vocab: FeatureVocabulary, fractions: Sequence[float],
                         config: SppmiConfig, referential_ids, candidate_ids, positives,
                         k: int = 100, seed: int = 0) -> list[AblationRow]:
    """Positive-validation recall@k after re-embedding random cohort fractions."""
    enc = _as_encoded(cohort, vocab)
    positives = set(positives)
    rows = []
    for i, frac in enumerate(fractions):
        if not 0 < frac <= 1:
            raise ConfigError(f"fraction must lie in (0, 1], got {frac}")
        sub = enc.subsample(frac, derive_seed(seed, "ablation", i))
        ranked = rank_indications(embed(sub, vocab, config), referential_ids, candidate_ids)
        hits = sum(1 for p, pos in ranked.positions().items() if p in positives and pos <= k)
        rows.append(AblationRow(frac, sub.n_patients, hits,
                                hits / len(positives) if positives else float("nan")))
    return rows


def write_ablation(rows: Sequence[AblationRow], path, k: int = 100) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["fraction", "n_patients", f"positives_in_top_{k}", f"recall_at_{k}"])
        for r in rows:
            out.writerow([r.fraction, r.n_patients, r.positives_in_top, repr(r.recall)])


# --------------------------------------------------------------------------
# 2D projection


@dataclass(frozen=True, eq=False)
class Projection:
    coords: np.ndarray  # V x 2
    chapters: tuple[str | None, ...]


def project_2d(embeddings: EmbeddingMatrix | np.ndarray, vocab: FeatureVocabulary | None = None,
               seed: int = 0) -> Projection:
    """Mean-centred projection onto the top two principal components."""
    X = embeddings.vectors if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings, float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ConfigError("projection needs embeddings of dimension >= 2")
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        coords = np.zeros((X.shape[0], 2))
    else:
        u, s, _ = truncated_svd(Xc, 2, seed=seed)
        coords = u * s
    chapters = tuple(
        (f.chapter if f.kind is FeatureKind.DIAGNOSIS else None) for f in vocab.entries
    ) if vocab is not None else (None,) * X.shape[0]
    return Projection(coords, chapters)


def write_projection(proj: Projection, vocab: FeatureVocabulary, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["feature_name", "chapter", "x", "y"])
        for name, ch, (x, y) in zip(vocab.names, proj.chapters, proj.coords):
            out.writerow([name, ch or "", repr(float(x)), repr(float(y))])


# --------------------------------------------------------------------------
# report


@dataclass
class EvaluationReport:
    if_score: float
    recall: dict[tuple[str, int], float]
    predictive: PredictiveReport | None = None


def evaluate_ranking(ranked: RankedList, validations: ValidationSet, ks=RECALL_KS,
                     table=SCORE_TABLE) -> EvaluationReport:
    recall = {}
    for cls, members in (("pos", validations.positives), ("neg", validations.negatives)):
        if members:
            for k in ks:
                recall[(cls, k)] = recall_at_k(ranked, members, k)
    return EvaluationReport(if_score(ranked, validations, table), recall)


def write_report(report: EvaluationReport, path) -> None:
    lines = ["[indication_finding]", f"if_score = {report.if_score!r}"]
    for (cls, k), value in sorted(report.recall.items(), key=lambda kv: (kv[0][0] != "pos", kv[0][1])):
        lines.append(f"recall@{k}.{cls} = {value!r}")
    if report.predictive is not None:
        p = report.predictive
        lines += ["", "[predictive]",
                  "# logistic regression only; AUC on the holdout set",
                  f"median_count_auc = {p.median_auc_counts!r}",
                  f"median_embedding_auc = {p.median_auc_embedding!r}",
                  "", "target,prevalence,count_auc,embedding_auc"]
        for t in p.tasks:
            lines.append(f"{t.target},{t.prevalence!r},{t.auc_counts!r},{t.auc_embedding!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
