"""Rank candidate indications by embedding proximity to referentials.

Candidates are ranked separately against each referential by cosine
similarity, and ordered by the median of those ranks.  The stability pass
re-embeds random halves of the cohort, takes a normal lower bound of each
candidate-referential similarity, re-ranks on it and flags candidates whose
rank moves too far.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import EmbeddingMatrix, SppmiConfig, _as_encoded, embed
from .errors import DataError, NumericError
from .features import FeatureVocabulary

log = logging.getLogger(__name__)

Z95 = 1.959964


def cosine_similarity(u, w) -> float:
    u, w = np.asarray(u, dtype=float), np.asarray(w, dtype=float)
    if u.shape != w.shape:
        raise ValueError("vectors differ in dimension")
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu == 0 or nw == 0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return float(np.clip(u @ w / (nu * nw), -1.0, 1.0))


def similarity_matrix(vectors: np.ndarray, candidate_ids, referential_ids,
                      dead_value: float | None = None) -> np.ndarray:
    """Cosine similarities, shape (n_candidates, n_referentials).

    Zero-norm referentials raise.  Zero-norm candidates raise unless
    ``dead_value`` is given, in which case their similarities are set to it.
    """
    cand = vectors[np.asarray(candidate_ids, dtype=np.int64)]
    ref = vectors[np.asarray(referential_ids, dtype=np.int64)]
    rn = np.linalg.norm(ref, axis=1)
    if np.any(rn == 0):
        raise NumericError("a referential has a zero embedding vector")
    cn = np.linalg.norm(cand, axis=1)
    dead = cn == 0
    if dead.any() and dead_value is None:
        raise NumericError(f"{int(dead.sum())} candidates have zero embedding vectors")
    sims = (cand @ ref.T) / (np.where(dead, 1.0, cn)[:, None] * rn[None, :])
    sims = np.clip(sims, -1.0, 1.0)
    if dead.any():
        sims[dead] = dead_value
    return sims


def per_referential_ranks(scores: np.ndarray, candidate_ids) -> np.ndarray:
    """1-based ranks by descending score within each column, ties by ascending id."""
    ids = np.asarray(candidate_ids)
    ranks = np.empty(scores.shape, dtype=np.int64)
    for j in range(scores.shape[1]):
        order = np.lexsort((ids, -scores[:, j]))
        ranks[order, j] = np.arange(1, len(ids) + 1)
    return ranks


@dataclass(frozen=True)
class RankedEntry:
    feature_id: int
    similarities: tuple[float, ...]
    ranks: tuple[int, ...]
    median_rank: float
    final_position: int


@dataclass(frozen=True)
class RankedList:
    entries: tuple[RankedEntry, ...]
    referential_ids: tuple[int, ...]
    removed: tuple[tuple[int, tuple[int, ...]], ...] = ()  # (feature_id, deltas) filtered out

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def feature_ids(self) -> list[int]:
        return [e.feature_id for e in self.entries]

    def positions(self) -> dict[int, int]:
        return {e.feature_id: e.final_position for e in self.entries}

    def rank_of(self, feature_id: int, referential_index: int) -> int:
        for e in self.entries:
            if e.feature_id == feature_id:
                return e.ranks[referential_index]
        raise KeyError(feature_id)


def rank_from_similarities(sims: np.ndarray, candidate_ids, referential_ids) -> RankedList:
    ids = np.asarray(candidate_ids, dtype=np.int64)
    ranks = per_referential_ranks(sims, ids)
    med = np.median(ranks, axis=1)
    best = ranks.min(axis=1)
    order = np.lexsort((ids, best, med))
    entries = tuple(
        RankedEntry(int(ids[i]), tuple(float(x) for x in sims[i]), tuple(int(r) for r in ranks[i]),
                    float(med[i]), pos)
        for pos, i in enumerate(order, start=1))
    return RankedList(entries, tuple(int(r) for r in referential_ids))


def rank_indications(embeddings: EmbeddingMatrix | np.ndarray, referential_ids: Sequence[int],
                     candidate_ids) -> RankedList:
    """Rank candidates by median per-referential cosine rank.

    Candidates with a zero embedding vector are dropped with a warning.
    """
    vectors = embeddings.vectors if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    referential_ids = [int(r) for r in referential_ids]
    if not referential_ids:
        raise DataError("no referential features")
    cands = sorted(int(c) for c in candidate_ids if int(c) not in set(referential_ids))
    if not cands:
        raise DataError("empty candidate set")
    if max(referential_ids) >= len(vectors):
        raise DataError("a referential has no embedding row")
    alive = np.linalg.norm(vectors[cands], axis=1) > 0
    if not alive.all():
        warnings.warn(f"dropping {int((~alive).sum())} candidates with zero embedding vectors",
                      RuntimeWarning, stacklevel=2)
        cands = [c for c, a in zip(cands, alive) if a]
    sims = similarity_matrix(vectors, cands, referential_ids)
    return rank_from_similarities(sims, cands, referential_ids)


# --------------------------------------------------------------------------
# stability


def derive_seed(master: int, *parts) -> int:
    """Deterministic 63-bit seed from a master seed and labels."""
    text = ":".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def normal_lower_bound(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, sample sd, mean - 1.959964 sd) along ``axis``."""
    mean = samples.mean(axis=axis)
    sd = samples.std(axis=axis, ddof=1)
    return mean, sd, mean - Z95 * sd


@dataclass(frozen=True, eq=False)
class StabilityReport:
    candidate_ids: tuple[int, ...]
    referential_ids: tuple[int, ...]
    runs: np.ndarray  # (n_runs, n_candidates, n_referentials)
    mean: np.ndarray
    sd: np.ndarray
    lower_bound: np.ndarray
    rank_full: np.ndarray
    rank_lb: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return np.abs(self.rank_full - self.rank_lb)

    def unstable(self, threshold: int = 200) -> set[int]:
        bad = (self.delta > threshold).any(axis=1)
        return {c for c, b in zip(self.candidate_ids, bad) if b}

    def deltas_of(self, feature_id: int) -> tuple[int, ...]:
        i = self.candidate_ids.index(feature_id)
        return tuple(int(x) for x in self.delta[i])


def _subsample_similarities(enc, vocab, config, cands, refs, fraction, seed):
    sub = enc.subsample(fraction, seed)
    if sub.n_patients == 0:
        raise DataError("stability subsample is empty")
    emb = embed(sub, vocab, config)
    n_dead = int((np.linalg.norm(emb.vectors[cands], axis=1) == 0).sum())
    if n_dead:
        log.warning("%d candidates absent from a subsample; similarity set to 0", n_dead)
    return similarity_matrix(emb.vectors, cands, refs, dead_value=0.0)


def stability_pass(cohort, vocab: FeatureVocabulary, config: SppmiConfig, referential_ids,
                   candidate_ids, n_runs: int = 5, fraction: float = 0.5, seed: int = 0,
                   ranked_full: RankedList | None = None, threads: int = 1) -> StabilityReport:
    """Subsample re-runs and lower-bound re-ranking.

    Each of ``n_runs`` runs embeds an independent ``fraction`` subsample
    (seeds derived from ``seed``) and records candidate-referential cosine
    similarities.  ``ranked_full`` is the full-cohort ranking; it is computed
    if not supplied.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    enc = _as_encoded(cohort, vocab)
    refs = [int(r) for r in referential_ids]
    if ranked_full is None:
        ranked_full = rank_indications(embed(enc, vocab, config), refs, candidate_ids)
    cands = sorted(ranked_full.feature_ids)
    seeds = [derive_seed(seed, "stability", i) for i in range(n_runs)]

    def run(s):
        return _subsample_similarities(enc, vocab, config, cands, refs, fraction, s)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = np.stack(list(pool.map(run, seeds)))
    else:
        runs = np.stack([run(s) for s in seeds])
    mean, sd, lb = normal_lower_bound(runs, axis=0)
    by_id = {e.feature_id: e.ranks for e in ranked_full.entries}
    rank_full = np.array([by_id[c] for c in cands], dtype=np.int64)
    rank_lb = per_referential_ranks(lb, cands)
    return StabilityReport(tuple(cands), tuple(refs), runs, mean, sd, lb, rank_full, rank_lb)


def apply_stability_filter(ranked_full: RankedList, report: StabilityReport, top_n: int = 200,
                           delta_threshold: int = 200) -> RankedList:
    """Drop unstable features from the top ``top_n`` and renumber the rest."""
    unstable = report.unstable(delta_threshold)
    kept, removed = [], []
    for e in ranked_full.entries[:top_n]:
        if e.feature_id in unstable:
            removed.append((e.feature_id, report.deltas_of(e.feature_id)))
        else:
            kept.append(e)
    for fid, deltas in removed:
        log.info("removed unstable feature %d (deltas %s)", fid, deltas)
    entries = tuple(RankedEntry(e.feature_id, e.similarities, e.ranks, e.median_rank, pos)
                    for pos, e in enumerate(kept, start=1))
    return RankedList(entries, ranked_full.referential_ids, tuple(removed))


# --------------------------------------------------------------------------
# export


def write_ranked_list(ranked: RankedList, vocab: FeatureVocabulary, path,
                      unstable: set[int] = frozenset()) -> None:
    k = len(ranked.referential_ids)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["final_position", "feature_name", "median_rank"]
                     + [f"sim_ref{j + 1}" for j in range(k)]
                     + [f"rank_ref{j + 1}" for j in range(k)] + ["stable"])
        for e in ranked.entries:
            out.writerow([e.final_position, vocab[e.feature_id].name, repr(e.median_rank)]
                         + [repr(s) for s in e.similarities] + list(e.ranks)
                         + [str(e.feature_id not in unstable).lower()])


def write_stability(report: StabilityReport, vocab: FeatureVocabulary, path) -> None:
    delta = report.delta
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["feature_name", "referential", "mean", "sd", "lower_bound", "rank_full",
                      "rank_lb", "delta"])
        for i, c in enumerate(report.candidate_ids):
            for j, r in enumerate(report.referential_ids):
                out.writerow([vocab[c].name, vocab[r].name, repr(float(report.mean[i, j])),
                              repr(float(report.sd[i, j])), repr(float(report.lower_bound[i, j])),
                              int(report.rank_full[i, j]), int(report.rank_lb[i, j]),
                              int(delta[i, j])])
