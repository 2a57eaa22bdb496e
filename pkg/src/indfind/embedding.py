"""Co-occurrence counting, SPPMI and truncated-SVD embeddings.

Each patient's record is tiled into consecutive, non-overlapping calendar
windows of ``window_days`` anchored at the patient's first mapped event.
Every window carries the patient's gender feature and age-bucket feature
exactly once.  Pairs of distinct features sharing a window are counted in both
orientations, so ``counts`` is symmetric and

    marginals[a] = sum_b counts[a, b]      total_pairs = sum_a marginals[a]

The SPPMI entry for a pair is ``max(0, log(#(a,b) Z / (#(a) #(b)**alpha)) -
log(shift))`` with ``Z = sum_c #(c)**alpha`` (natural log, no shift for
``shift <= 1``).  Embeddings are ``U_d * s_d**v`` from a rank-``d`` SVD.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

from .cohort import Cohort, PatientRecord, subsample_indices
from .errors import ConfigError, DataError, NumericError
from .features import AGE_BUCKETS, AGE_FEATURES, EXCLUDED_CHAPTERS, FeatureVocabulary, icd10_chapter

log = logging.getLogger(__name__)

_EPOCH = dt.date(1970, 1, 1).toordinal()
COUNT_MODES = ("presence", "multiplicity")
MAX_UNMAPPED_FRACTION = 0.5


@dataclass(frozen=True)
class SppmiConfig:
    window_days: int = 360
    dim: int = 75
    alpha: float = 0.75
    eigen_weight: float = 0.75
    shift: int = 0
    seed: int = 0
    count_mode: str = "presence"

    def __post_init__(self):
        if self.window_days < 1:
            raise ConfigError("window_days must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 <= self.eigen_weight <= 1:
            raise ConfigError("eigen_weight must lie in [0, 1]")
        if self.shift < 0:
            raise ConfigError("shift must be non-negative")
        if self.count_mode not in COUNT_MODES:
            raise ConfigError(f"count_mode must be one of {COUNT_MODES}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "SppmiConfig":
        casts = dict(window_days=int, dim=int, alpha=float, eigen_weight=float, shift=int,
                     seed=int, count_mode=str)
        unknown = set(values) - set(casts)
        if unknown:
            raise ConfigError(f"unknown sppmi keys: {sorted(unknown)}")
        return cls(**{k: casts[k](v) for k, v in values.items()})

    def as_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# encoding: patient records -> flat arrays of (day, feature id)


@dataclass(frozen=True, eq=False)
class EncodedCohort:
    """Mapped events of a cohort as flat arrays, one contiguous block per patient.

    ``days`` are days since 1970-01-01; events of patient ``i`` occupy
    ``ptr[i]:ptr[i+1]``.  Unmapped events are dropped.
    """

    patient_ids: tuple[str, ...]
    ptr: np.ndarray
    days: np.ndarray
    feats: np.ndarray
    birth_year: np.ndarray
    gender_feat: np.ndarray
    n_unmapped_diagnoses: int = 0

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    def __len__(self) -> int:
        return self.n_patients

    def select(self, idx) -> "EncodedCohort":
        idx = np.asarray(idx, dtype=np.int64)
        starts, stops = self.ptr[idx], self.ptr[idx + 1]
        lengths = stops - starts
        ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        take = np.concatenate([np.arange(a, b) for a, b in zip(starts, stops)]) if len(idx) else \
            np.zeros(0, dtype=np.int64)
        take = take.astype(np.int64)
        return EncodedCohort(tuple(self.patient_ids[i] for i in idx), ptr, self.days[take],
                             self.feats[take], self.birth_year[idx], self.gender_feat[idx])

    def subsample(self, fraction: float, seed: int) -> "EncodedCohort":
        """Same patient subset as :func:`indfind.cohort.subsample` with the same seed."""
        return self.select(subsample_indices(self.n_patients, fraction, seed))


def encode_cohort(cohort: Cohort, vocab: FeatureVocabulary) -> EncodedCohort:
    """Map every event of every patient to a feature id.

    Raises :class:`DataError` if more than half of the ICD-10 events outside
    the excluded chapters fail to map, which usually means the wrong code
    system or vocabulary was supplied.
    """
    cache: dict[tuple[str, str], int | None] = {}
    ptr, days, feats = [0], [], []
    n_diag = n_unmapped = 0
    for p in cohort.patients:
        for e in p.events:
            key = (e.code_system, e.code)
            if key not in cache:
                cache[key] = vocab.map_code(e.code_system, e.code)
            fid = cache[key]
            if e.code_system == "ICD10" and icd10_chapter(e.code) not in EXCLUDED_CHAPTERS:
                n_diag += 1
                n_unmapped += fid is None
            if fid is not None:
                days.append(e.date.toordinal() - _EPOCH)
                feats.append(fid)
        ptr.append(len(days))
    if n_diag and n_unmapped / n_diag > MAX_UNMAPPED_FRACTION:
        raise DataError(f"{n_unmapped} of {n_diag} diagnosis events are unmapped; "
                        "check the vocabulary and code systems")
    if n_unmapped:
        log.info("%d of %d diagnosis events unmapped", n_unmapped, n_diag)
    return EncodedCohort(
        cohort.patient_ids,
        np.asarray(ptr, dtype=np.int64),
        np.asarray(days, dtype=np.int64),
        np.asarray(feats, dtype=np.int32),
        np.asarray([p.birth_year for p in cohort.patients], dtype=np.int64),
        np.asarray([vocab.gender_feature(p.gender) for p in cohort.patients], dtype=np.int64),
        n_unmapped,
    )


def _as_encoded(data, vocab) -> EncodedCohort:
    return data if isinstance(data, EncodedCohort) else encode_cohort(data, vocab)


# --------------------------------------------------------------------------
# windows and co-occurrence


class Window(NamedTuple):
    start: dt.date
    end: dt.date  # exclusive
    features: tuple[int, ...]  # sorted, with multiplicity, demographics included


def build_windows(patient: PatientRecord, vocab: FeatureVocabulary, w: int) -> list[Window]:
    """Tile one patient's record into ``w``-day windows with demographics injected.

    Windows without a mapped event are skipped.  The age bucket is taken at
    each window's start date.
    """
    mapped = [(e.date, fid) for e in patient.events
              if (fid := vocab.map_code(e.code_system, e.code)) is not None]
    if not mapped:
        return []
    first = mapped[0][0]
    tiles: dict[int, list[int]] = {}
    for date, fid in mapped:
        tiles.setdefault((date - first).days // w, []).append(fid)
    out = []
    for k in sorted(tiles):
        start = first + dt.timedelta(days=k * w)
        demo = [vocab.gender_feature(patient.gender), vocab.age_feature(patient.age_at(start))]
        out.append(Window(start, start + dt.timedelta(days=w), tuple(sorted(tiles[k] + demo))))
    return out


_AGE_LOWER = np.array([lo for lo, _, _ in AGE_BUCKETS])


def _window_incidence(enc: EncodedCohort, vocab: FeatureVocabulary, w: int,
                      count_mode: str) -> sp.csr_matrix:
    """Windows x features matrix (presence 0/1 or occurrence counts)."""
    n = enc.n_patients
    counts = np.diff(enc.ptr)
    has = counts > 0
    first = np.zeros(n, dtype=np.int64)
    first[has] = enc.days[enc.ptr[:-1][has]]
    pidx = np.repeat(np.arange(n, dtype=np.int64), counts)
    k = (enc.days - first[pidx]) // w
    span = int(k.max()) + 1 if len(k) else 1
    win_key, win = np.unique(pidx * span + k, return_inverse=True)
    wp, wk = win_key // span, win_key % span
    start = first[wp] + wk * w
    year = start.astype("datetime64[D]").astype("datetime64[Y]").astype(np.int64) + 1970
    age = year - enc.birth_year[wp]
    if len(age) and age.min() < 18:
        raise DataError("patient younger than 18 inside an analysed window; filter the cohort first")
    age_ids = np.array([vocab.id(n) for n in AGE_FEATURES])
    age_feat = age_ids[np.searchsorted(_AGE_LOWER, age, side="right") - 1]

    n_win = len(win_key)
    rows = np.concatenate([win, np.arange(n_win), np.arange(n_win)])
    cols = np.concatenate([enc.feats.astype(np.int64), enc.gender_feat[wp], age_feat])
    data = np.ones(len(rows), dtype=np.int64)
    inc = sp.csr_matrix((data, (rows, cols)), shape=(n_win, len(vocab)))
    inc.sum_duplicates()
    if count_mode == "presence":
        inc.data[:] = 1
    return inc


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    counts: sp.csr_matrix  # symmetric, int64, zero diagonal
    marginals: np.ndarray
    total_pairs: int
    window_days: int
    count_mode: str = "presence"

    def triplets(self):
        c = self.counts.tocoo()
        order = np.lexsort((c.col, c.row))
        return zip(c.row[order].tolist(), c.col[order].tolist(), c.data[order].tolist())


def _pair_counts(enc, vocab, w, count_mode) -> sp.csr_matrix:
    inc = _window_incidence(enc, vocab, w, count_mode)
    c = (inc.T @ inc).tocsr()
    c.setdiag(0)
    c.eliminate_zeros()
    return c


def count_cooccurrences(data, vocab: FeatureVocabulary, w: int, count_mode: str = "presence",
                        threads: int = 1) -> CooccurrenceMatrix:
    """Count window co-occurrences of distinct features over a cohort.

    ``data`` is a :class:`Cohort` or an :class:`EncodedCohort`.  With
    ``threads > 1`` patients are partitioned and the integer count matrices
    summed, which gives the same result as a single pass.
    """
    if count_mode not in COUNT_MODES:
        raise ConfigError(f"count_mode must be one of {COUNT_MODES}")
    enc = _as_encoded(data, vocab)
    V = len(vocab)
    if enc.n_patients == 0 or len(enc.feats) == 0:
        warnings.warn("no mapped events: co-occurrence matrix is all zero", RuntimeWarning,
                      stacklevel=2)
        counts = sp.csr_matrix((V, V), dtype=np.int64)
    elif threads > 1:
        parts = np.array_split(np.arange(enc.n_patients), threads)
        with ThreadPoolExecutor(threads) as pool:
            mats = list(pool.map(lambda idx: _pair_counts(enc.select(idx), vocab, w, count_mode),
                                 [p for p in parts if len(p)]))
        counts = mats[0]
        for m in mats[1:]:
            counts = counts + m
        counts = counts.tocsr()
        counts.sort_indices()
    else:
        counts = _pair_counts(enc, vocab, w, count_mode)
        counts.sort_indices()
    marginals = np.asarray(counts.sum(axis=1)).ravel().astype(np.int64)
    return CooccurrenceMatrix(counts, marginals, int(marginals.sum()), w, count_mode)


def write_cooccurrences(cooc: CooccurrenceMatrix, vocab: FeatureVocabulary, path) -> None:
    names = vocab.names
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("feature_a", "feature_b", "count"))
        for a, b, c in cooc.triplets():
            out.writerow((names[a], names[b], c))


# --------------------------------------------------------------------------
# SPPMI


def compute_sppmi(cooc: CooccurrenceMatrix, alpha: float = 0.75, shift: float = 0) -> sp.csr_matrix:
    """Smoothed, optionally shifted, positive PMI matrix (sparse, natural log).

    Only pairs with ``#(a,b) > 0`` and a positive value are stored.
    ``alpha = 1`` gives plain PPMI; ``shift`` in {0, 1} applies no shift.
    """
    if cooc.total_pairs <= 0:
        raise DataError("co-occurrence matrix is empty (|D| = 0)")
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    c = cooc.counts.tocoo()
    m = cooc.marginals.astype(np.float64)
    ctx = m ** alpha
    z = ctx.sum()
    vals = np.log(c.data * z / (m[c.row] * ctx[c.col]))
    if shift > 1:
        vals -= np.log(shift)
    keep = vals > 0
    out = sp.csr_matrix((vals[keep], (c.row[keep], c.col[keep])), shape=c.shape)
    out.sort_indices()
    return out


# --------------------------------------------------------------------------
# truncated SVD and factorization


def _orth(a: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(a)
    return q


def truncated_svd(matrix, k: int, seed: int = 0, oversample: int = 10, n_power: int = 4,
                  tol: float = 1e-13, max_iter: int = 300):
    """Rank-``k`` SVD by randomized subspace iteration.

    A seeded Gaussian test matrix with ``k + oversample`` columns is pushed
    through at least ``n_power`` rounds of re-orthonormalised power iteration,
    continuing until the top-``k`` singular values move by less than
    ``tol * s[0]`` between rounds.  Columns of ``U`` are signed so that their
    largest-magnitude entry is positive.

    Returns ``(U, s, Vt)``; if ``k`` exceeds ``min(matrix.shape)`` the extra
    directions are zero-padded with a warning.
    """
    m, n = matrix.shape
    r = min(m, n)
    kk = min(k, r)
    if k > r:
        warnings.warn(f"requested rank {k} exceeds matrix rank bound {r}; padding with zeros",
                      RuntimeWarning, stacklevel=2)
    if kk == 0:
        return np.zeros((m, k)), np.zeros(k), np.zeros((k, n))
    l = min(kk + oversample, r)
    rng = np.random.default_rng(seed)
    q = _orth(matrix @ rng.standard_normal((n, l)))
    prev = None
    for it in range(1, max_iter + 1):
        q = _orth(matrix @ _orth(matrix.T @ q))
        if it < n_power:
            continue
        s = np.linalg.svd(np.asarray((matrix.T @ q).T), compute_uv=False)[:kk]
        if prev is not None and np.max(np.abs(s - prev)) <= tol * max(s[0], np.finfo(float).tiny):
            break
        prev = s
    else:
        raise NumericError(f"truncated SVD did not converge in {max_iter} iterations")
    b = np.asarray((matrix.T @ q).T)
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :kk]
    s, vt = s[:kk], vt[:kk]
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(kk)])
    flip[flip == 0] = 1
    u, vt = u * flip, vt * flip[:, None]
    if k > kk:
        u = np.hstack([u, np.zeros((m, k - kk))])
        s = np.concatenate([s, np.zeros(k - kk)])
        vt = np.vstack([vt, np.zeros((k - kk, n))])
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
        raise NumericError("non-finite values in SVD result")
    return u, s, vt


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    vectors: np.ndarray  # V x d
    singular_values: np.ndarray
    config: SppmiConfig | None = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def factorize(sppmi, d: int, v: float, seed: int = 0, config: SppmiConfig | None = None,
              svd=None) -> EmbeddingMatrix:
    """Embedding rows ``U_d * s_d**v`` of a non-negative SPPMI matrix.

    ``svd`` may pass a precomputed ``(U, s, Vt)`` of rank >= ``d`` (its
    leading ``d`` components are used), which is how the grid search shares
    one decomposition across dimensions.
    """
    if sppmi is not None:
        values = sppmi.data if sp.issparse(sppmi) else np.asarray(sppmi)
        if values.size and values.min() < 0:
            raise ConfigError("SPPMI matrix must be non-negative")
    u, s, _ = svd if svd is not None else truncated_svd(sppmi, d, seed=seed)
    u, s = u[:, :d], s[:d]
    vectors = u * np.power(s, v)
    if not np.all(np.isfinite(vectors)):
        raise NumericError("non-finite embedding entries")
    return EmbeddingMatrix(vectors, s.copy(), config)


def embed(data, vocab: FeatureVocabulary, config: SppmiConfig = SppmiConfig(),
          threads: int = 1) -> EmbeddingMatrix:
    """Cohort -> co-occurrence -> SPPMI -> embedding matrix."""
    cooc = count_cooccurrences(data, vocab, config.window_days, config.count_mode, threads)
    sppmi = compute_sppmi(cooc, config.alpha, config.shift)
    return factorize(sppmi, config.dim, config.eigen_weight, config.seed, config)


def write_embeddings(emb: EmbeddingMatrix, vocab: FeatureVocabulary, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["feature_id", "feature_name"] + [f"v{i + 1}" for i in range(emb.dim)])
        for fid, (name, row) in enumerate(zip(vocab.names, emb.vectors)):
            out.writerow([fid, name] + [repr(float(x)) for x in row])


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    names, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            names.append(row[1])
            rows.append([float(x) for x in row[2:]])
    return names, np.asarray(rows)
