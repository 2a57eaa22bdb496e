"""Hyperparameter grid search over SPPMI settings, scored by the IF score."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .embedding import SppmiConfig, _as_encoded, compute_sppmi, count_cooccurrences, factorize, truncated_svd
from .errors import ConfigError, IndfindError
from .evaluation import ValidationSet, if_score
from .features import FeatureVocabulary
from .ranking import rank_indications

log = logging.getLogger(__name__)

GRID_KEYS = ("window_days", "dim", "alpha", "eigen_weight")

PAPER_GRID = {
    "window_days": (180, 360),
    "dim": (25, 50, 75, 100),
    "alpha": (0.25, 0.5, 0.75, 1.0),
    "eigen_weight": (0.0, 0.25, 0.5, 0.75, 1.0),
}


def expand_grid(grid: Mapping[str, Sequence], base: SppmiConfig = SppmiConfig()) -> list[SppmiConfig]:
    """Cartesian product of grid values (window, dim, alpha, eigen weight order)."""
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    axes = [grid.get(k, (getattr(base, k),)) for k in GRID_KEYS]
    out = []
    for w, d, a, v in itertools.product(*axes):
        out.append(SppmiConfig(int(w), int(d), float(a), float(v), base.shift, base.seed,
                               base.count_mode))
    return out


def read_grid_file(path) -> dict[str, tuple]:
    """Parse ``key = v1, v2, ...`` lines (``#`` comments allowed)."""
    grid = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, values = line.partition("=")
        key = key.strip()
        if key not in GRID_KEYS:
            raise ConfigError(f"{path}: unknown grid key {key!r}")
        cast = int if key in ("window_days", "dim") else float
        grid[key] = tuple(cast(v) for v in values.split(",") if v.strip())
        if not grid[key]:
            raise ConfigError(f"{path}: no values for {key}")
    return grid


def grid_key(cfg: SppmiConfig) -> tuple:
    return (cfg.window_days, cfg.dim, float(cfg.alpha), float(cfg.eigen_weight))


@dataclass(frozen=True)
class GridResult:
    config: SppmiConfig
    score: float | None
    status: str = "ok"
    error: str = ""


def best_result(table: Iterable[GridResult]) -> GridResult:
    """Highest score; ties go to smaller dim, then smaller window, then grid order."""
    ok = [(i, r) for i, r in enumerate(table) if r.status == "ok"]
    if not ok:
        raise IndfindError("every grid point failed")
    return min(ok, key=lambda ir: (-ir[1].score, ir[1].config.dim, ir[1].config.window_days, ir[0]))[1]


def hyperparameter_search(
    cohort,
    vocab: FeatureVocabulary,
    grid: Sequence[SppmiConfig] | Mapping[str, Sequence],
    validations: ValidationSet,
    referentials: Sequence[int],
    candidates: Iterable[int],
    completed: Mapping[tuple, GridResult] | None = None,
    on_result: Callable[[GridResult], None] | None = None,
    threads: int = 1,
) -> tuple[SppmiConfig, list[GridResult]]:
    """Embed, rank and score every grid point; return the best config and the table.

    Points already present in ``completed`` (keyed by :func:`grid_key`) are
    reused rather than recomputed.  A failing point is recorded with status
    ``"failed"``.  One SVD of rank ``max(dim)`` is shared by every dimension
    and eigen weight with the same window and smoothing.
    """
    configs = expand_grid(grid) if isinstance(grid, Mapping) else list(grid)
    if not configs:
        raise ConfigError("empty grid")
    completed = dict(completed or {})
    enc = _as_encoded(cohort, vocab)
    candidates = sorted(candidates)
    max_dim = max(c.dim for c in configs)
    cooc_cache, svd_cache = {}, {}
    table = []
    for cfg in configs:
        key = grid_key(cfg)
        if key in completed:
            table.append(completed[key])
            continue
        try:
            ck = (cfg.window_days, cfg.count_mode)
            if ck not in cooc_cache:
                cooc_cache[ck] = count_cooccurrences(enc, vocab, cfg.window_days, cfg.count_mode, threads)
            sk = (cfg.window_days, cfg.count_mode, cfg.alpha, cfg.shift)
            if sk not in svd_cache:
                svd_cache.clear()
                sppmi = compute_sppmi(cooc_cache[ck], cfg.alpha, cfg.shift)
                svd_cache[sk] = truncated_svd(sppmi, max_dim, seed=cfg.seed)
            emb = factorize(None, cfg.dim, cfg.eigen_weight, cfg.seed, cfg, svd=svd_cache[sk])
            ranked = rank_indications(emb, referentials, candidates)
            result = GridResult(cfg, if_score(ranked, validations))
        except IndfindError as exc:
            log.warning("grid point %s failed: %s", key, exc)
            result = GridResult(cfg, None, "failed", str(exc))
        table.append(result)
        if on_result is not None:
            on_result(result)
    return best_result(table).config, table
