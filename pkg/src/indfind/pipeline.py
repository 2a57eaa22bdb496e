"""End-to-end orchestration driven by a flat ``key = value`` configuration.

Every stage runs under a label; failures are re-raised as :class:`StageError`
carrying the stage name and an exit code (2 config, 3 data, 4 numeric).
Outputs are written as ``<name>.partial`` and renamed only once the whole
command succeeds, then listed with their sha256 in ``manifest.json``.
"""

from __future__ import annotations

import contextlib
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping


from . import __version__
from .cohort import CohortCriteria, apply_cohort_filters, load_events, write_waterfall
from .embedding import (SppmiConfig, compute_sppmi, count_cooccurrences, encode_cohort, factorize,
                        write_cooccurrences, write_embeddings)
from .errors import ConfigError, DataError, IndfindError, NumericError
from .evaluation import (RECALL_KS, SCORE_TABLE, PredictionTaskSpec, ValidationSet,
                         ablation_cohort_size, evaluate_ranking, predictive_eval, project_2d,
                         write_ablation, write_projection, write_report)
from .features import (build_vocabulary, data_path, inclusion_code_sets, rankable_features,
                       read_roles_file)
from .ranking import (apply_stability_filter, derive_seed, rank_indications, stability_pass,
                      write_ranked_list, write_stability)
from .search import GridResult, expand_grid, grid_key, hyperparameter_search, read_grid_file

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# --------------------------------------------------------------------------
# configuration


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(cast):
    def parse(s):
        if isinstance(s, (list, tuple)):
            return tuple(cast(x) for x in s)
        return tuple(cast(x.strip()) for x in str(s).split(",") if x.strip())
    return parse


def _str(s) -> str:
    return str(s).strip()


# key: (default, parser, help)
KEYS: dict[str, tuple[object, Callable, str]] = {
    "paths.events": ("", _str, "event file (patient_id,date,code,code_system)"),
    "paths.patients": ("", _str, "patient file (patient_id,birth_year,gender,enroll_start,enroll_end)"),
    "paths.vocabulary": ((), _list(str), "comma-separated vocabulary mapping files"),
    "paths.roles": ("", _str, "optional role file (feature_name,role); overrides vocabulary roles"),
    "paths.overrides": ("", _str, "optional granular ICD-10 groupings (feature_name,icd10_prefix)"),
    "paths.inclusion": ("", _str, "inclusion disease file; empty = bundled list"),
    "paths.grid": ("", _str, "grid file for the grid command; empty = bundled 160-point grid"),
    "paths.out": ("", _str, "output directory"),
    "cohort.min_age": (18, int, "minimum age in years"),
    "cohort.min_continuous_enrollment": (365, int, "minimum days of one continuous enrollment span"),
    "cohort.require_two_visits_apart": (365, int, "minimum days between first and last event"),
    "cohort.max_diagnoses_per_day": (50, int, "patients above this many ICD-10 codes on one day are dropped"),
    "cohort.exclusion_code_prefixes": (("O00-O99", "P00-P96"), _list(str),
                                       "ICD-10 prefixes or ranges that exclude a patient"),
    "cohort.clinical_inclusion": (False, _bool, "require a diagnosis from the inclusion disease list"),
    "cohort.as_of": ("2018-01-01", _str, "date at which age is measured"),
    "cohort.skip_bad_rows": (False, _bool, "log and skip malformed rows instead of failing"),
    "cohort.drop_outside_enrollment": (False, _bool, "drop events outside every enrollment span"),
    "sppmi.window_days": (360, int, "co-occurrence window length in days"),
    "sppmi.dim": (75, int, "embedding dimension"),
    "sppmi.alpha": (0.75, float, "context-distribution smoothing exponent"),
    "sppmi.eigen_weight": (0.75, float, "singular value exponent"),
    "sppmi.shift": (0, int, "PMI shift (values <= 1 mean no shift)"),
    "sppmi.count_mode": ("presence", _str, "presence or multiplicity co-occurrence counting"),
    "stability.n_runs": (5, int, "number of subsample re-runs"),
    "stability.fraction": (0.5, float, "subsample fraction"),
    "stability.top_n": (200, int, "only the top N candidates are checked and kept"),
    "stability.delta_threshold": (200, int, "maximum allowed rank shift"),
    "eval.ks": (RECALL_KS, _list(int), "recall cut-offs"),
    "eval.score_table": ("", _str, "optional score table file (last_position,positive,negative)"),
    "eval.targets": ((), _list(str), "feature names of prediction targets; empty = no predictive task"),
    "eval.lookback": (180, int, "prediction look-back in days"),
    "eval.horizon": (1, int, "days between index date and target onset"),
    "eval.cohort_size": (50_000, int, "prediction task cohort size"),
    "eval.holdout_size": (10_000, int, "prediction task holdout size"),
    "eval.l2": (1.0, float, "logistic regression L2 penalty"),
    "eval.max_iter": (2000, int, "logistic regression iterations"),
    "eval.permute_labels": (False, _bool, "shuffle task labels (null control)"),
    "ablate.fractions": ((0.1, 0.25, 0.5, 0.75, 1.0), _list(float), "cohort fractions for ablation"),
    "ablate.k": (100, int, "recall cut-off for ablation"),
    "seed": (0, int, "master seed; stage seeds are derived from it"),
    "threads": (1, int, "worker cap for parallel stages"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def read_config_file(path) -> dict[str, object]:
    """Parse a config file; relative ``paths.*`` entries resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(), str(path))
    for key, value in values.items():
        if key.startswith("paths.") and value:
            parts = [p.strip() for p in str(value).split(",")]
            values[key] = ",".join(str(path.parent / p) if not Path(p).is_absolute() else p
                                   for p in parts if p)
    return values


def _canonical(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return value


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def from_layers(cls, *layers: Mapping[str, object]) -> "RunConfig":
        """Merge layers left to right over the defaults (later layers win)."""
        merged = {k: d for k, (d, _, _) in KEYS.items()}
        for layer in layers:
            for key, raw in layer.items():
                if key not in KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                try:
                    merged[key] = KEYS[key][1](raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def section(self, prefix: str) -> dict[str, object]:
        return {k[len(prefix) + 1:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def validate(self) -> None:
        """Bounds checks; raises :class:`ConfigError` before any compute."""
        self.criteria()
        self.sppmi()
        frac = self["stability.fraction"]
        if not 0 < frac <= 1:
            raise ConfigError(f"stability.fraction must lie in (0, 1], got {frac}")
        if self["stability.n_runs"] < 2:
            raise ConfigError("stability.n_runs must be at least 2")
        if self["stability.top_n"] < 1 or self["stability.delta_threshold"] < 0:
            raise ConfigError("stability.top_n must be positive and delta_threshold non-negative")
        if not self["eval.ks"] or min(self["eval.ks"]) < 1:
            raise ConfigError("eval.ks must be positive integers")
        if self["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        for f in self["ablate.fractions"]:
            if not 0 < f <= 1:
                raise ConfigError(f"ablate.fractions must lie in (0, 1], got {f}")
        if self["eval.l2"] < 0:
            raise ConfigError("eval.l2 must be non-negative")

    def check_paths(self) -> None:
        """Referenced input files exist and the output directory is usable."""
        for key in ("paths.events", "paths.patients"):
            if not self[key]:
                raise ConfigError(f"{key} is required")
        files = [self["paths.events"], self["paths.patients"], *self["paths.vocabulary"]]
        files += [self[k] for k in ("paths.roles", "paths.overrides", "paths.inclusion",
                                    "paths.grid", "eval.score_table") if self[k]]
        for f in files:
            if not Path(f).is_file():
                raise ConfigError(f"input file not found: {f}")
        self.out_dir()

    def out_dir(self) -> Path:
        if not self["paths.out"]:
            raise ConfigError("paths.out (--out) is required")
        out = Path(self["paths.out"])
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output path is not a directory: {out}")
        return out

    def criteria(self) -> CohortCriteria:
        c = self.section("cohort")
        inclusion = ()
        if c["clinical_inclusion"]:
            inclusion = inclusion_code_sets(self["paths.inclusion"] or None)
        return CohortCriteria(c["min_age"], c["min_continuous_enrollment"],
                              c["require_two_visits_apart"], c["max_diagnoses_per_day"],
                              tuple(c["exclusion_code_prefixes"]), inclusion)

    def as_of(self) -> dt.date:
        try:
            return dt.date.fromisoformat(self["cohort.as_of"])
        except ValueError:
            raise ConfigError(f"cohort.as_of is not a date: {self['cohort.as_of']!r}") from None

    def sppmi(self) -> SppmiConfig:
        return SppmiConfig.from_mapping({**self.section("sppmi"),
                                         "seed": derive_seed(self["seed"], "factorize")})

    def score_table(self):
        path = self["eval.score_table"]
        if not path:
            return SCORE_TABLE
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["last_position"]), float(row["positive"]), float(row["negative"])))
        if not rows or [r[0] for r in rows] != sorted({r[0] for r in rows}):
            raise ConfigError(f"{path}: score table positions must be strictly increasing")
        return tuple(rows)

    def flat(self) -> dict[str, object]:
        return {k: _canonical(v) for k, v in sorted(self.values.items())}

    def hash(self, keys=None) -> str:
        """sha256 of the canonical config; the output location is left out."""
        flat = self.flat()
        keys = set(flat) - {"paths.out"} if keys is None else set(keys)
        flat = {k: v for k, v in flat.items() if k in keys}
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()

    def render(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.flat().items())


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    lines = []
    for key, (default, _, doc) in KEYS.items():
        lines.append(f"  {key:<{width}}  {doc} [default: {_canonical(default)}]")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# stage bookkeeping


class StageError(IndfindError):
    def __init__(self, stage: str, exit_code: int, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.exit_code = exit_code


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exc.exit_code
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunContext:
    """Stage timing, ``.partial`` outputs and the manifest for one command."""

    def __init__(self, config: RunConfig, command: str):
        self.config = config
        self.command = command
        self.out = config.out_dir()
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        manifest = self.out / "manifest.json"
        if manifest.exists():
            manifest.unlink()

    @contextlib.contextmanager
    def stage(self, name: str):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except ConfigError as exc:
            raise StageError(name, EXIT_CONFIG, str(exc)) from exc
        except NumericError as exc:
            raise StageError(name, EXIT_NUMERIC, str(exc)) from exc
        except (DataError, IndfindError, OSError, ValueError, KeyError) as exc:
            raise StageError(name, EXIT_DATA, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def path(self, name: str) -> Path:
        """Where to write output ``name`` while the command is still running."""
        if name not in self.outputs:
            self.outputs.append(name)
        return self.out / f"{name}.partial"

    def finish(self, extra: Mapping[str, object] | None = None) -> dict:
        hashes = {}
        for name in self.outputs:
            final = self.out / name
            os.replace(self.out / f"{name}.partial", final)
            hashes[name] = sha256_file(final)
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": self.config.flat(),
            "config_hash": self.config.hash(),
            "seed": self.config["seed"],
            "stage_seeds": {s: derive_seed(self.config["seed"], s)
                            for s in ("factorize", "stability", "predict", "ablate", "project")},
            "stage_timings": self.timings,
            "outputs": hashes,
        }
        if extra:
            manifest.update(extra)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


# --------------------------------------------------------------------------
# shared stages


@dataclass
class Prepared:
    cohort: object
    vocab: object
    encoded: object
    candidates: list[int]
    referentials: list[int]


def _observed_icd10(cohort) -> set[str]:
    return {e.code for p in cohort.patients for e in p.events if e.code_system == "ICD10"}


def _read_overrides(path) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["feature_name"], []).append(row["icd10_prefix"])
    return groups


def prepare(ctx: RunContext, write: bool = True) -> Prepared:
    """ingest -> filter -> vocab -> encode."""
    cfg = ctx.config
    with ctx.stage("ingest"):
        store = load_events(cfg["paths.events"], cfg["paths.patients"],
                            skip_bad_rows=cfg["cohort.skip_bad_rows"],
                            drop_outside_enrollment=cfg["cohort.drop_outside_enrollment"])
        log.info("loaded %d patients, %d events (%d bad rows, %d outside enrollment)",
                 store.n_patients, store.n_events, len(store.bad_rows), store.events_outside_enrollment)
    with ctx.stage("filter"):
        cohort = apply_cohort_filters(store, cfg.criteria(), cfg.as_of(), threads=cfg["threads"])
        if write:
            write_waterfall(cohort, ctx.path("waterfall.csv"))
        if not len(cohort):
            raise DataError("cohort is empty after filtering")
    with ctx.stage("vocab"):
        overrides = _read_overrides(cfg["paths.overrides"]) if cfg["paths.overrides"] else None
        vocab = build_vocabulary(cfg["paths.vocabulary"], overrides, sorted(_observed_icd10(cohort)))
        if cfg["paths.roles"]:
            vocab = vocab.with_roles(read_roles_file(cfg["paths.roles"]))
        if write:
            vocab.write(ctx.path("vocabulary.csv"))
        refs = sorted(vocab.referentials)
        if not refs:
            raise DataError("no referential features in the vocabulary")
        encoded = encode_cohort(cohort, vocab)
        cands = sorted(rankable_features(vocab))
    return Prepared(cohort, vocab, encoded, cands, refs)


def _embed(ctx: RunContext, prep: Prepared, write: bool = True):
    cfg, sp_cfg = ctx.config, ctx.config.sppmi()
    with ctx.stage("cooccur"):
        cooc = count_cooccurrences(prep.encoded, prep.vocab, sp_cfg.window_days, sp_cfg.count_mode,
                                   cfg["threads"])
        if write:
            write_cooccurrences(cooc, prep.vocab, ctx.path("cooccurrence.csv"))
    with ctx.stage("sppmi"):
        sppmi = compute_sppmi(cooc, sp_cfg.alpha, sp_cfg.shift)
    with ctx.stage("factorize"):
        emb = factorize(sppmi, sp_cfg.dim, sp_cfg.eigen_weight, sp_cfg.seed, sp_cfg)
        if write:
            write_embeddings(emb, prep.vocab, ctx.path("embeddings.csv"))
    return emb


def _prediction_tasks(cfg: RunConfig, vocab) -> list[PredictionTaskSpec]:
    tasks = []
    for i, name in enumerate(cfg["eval.targets"]):
        try:
            target = vocab.id(name)
        except KeyError:
            raise ConfigError(f"eval.targets: unknown feature {name!r}") from None
        tasks.append(PredictionTaskSpec(target, cfg["eval.lookback"], cfg["eval.horizon"],
                                        cfg["eval.cohort_size"], cfg["eval.holdout_size"],
                                        derive_seed(cfg["seed"], "predict", i),
                                        cfg["eval.permute_labels"]))
    return tasks


# --------------------------------------------------------------------------
# commands


def cmd_run(config: RunConfig) -> dict:
    """Full pipeline; returns the manifest."""
    config.check_paths()
    ctx = RunContext(config, "run")
    table = config.score_table()
    prep = prepare(ctx)
    emb = _embed(ctx, prep)
    with ctx.stage("rank"):
        ranked = rank_indications(emb, prep.referentials, prep.candidates)
    with ctx.stage("stability"):
        report = stability_pass(prep.encoded, prep.vocab, config.sppmi(), prep.referentials,
                                ranked.feature_ids, config["stability.n_runs"],
                                config["stability.fraction"], derive_seed(config["seed"], "stability"),
                                ranked_full=ranked, threads=config["threads"])
        write_stability(report, prep.vocab, ctx.path("stability.csv"))
    with ctx.stage("stability_filter"):
        unstable = report.unstable(config["stability.delta_threshold"])
        final = apply_stability_filter(ranked, report, config["stability.top_n"],
                                       config["stability.delta_threshold"])
        write_ranked_list(ranked, prep.vocab, ctx.path("ranked_full.csv"), unstable)
        write_ranked_list(final, prep.vocab, ctx.path("ranked_list.csv"), unstable)
    with ctx.stage("evaluate"):
        validations = ValidationSet.from_vocabulary(prep.vocab)
        if validations.positives or validations.negatives:
            evaluation = evaluate_ranking(final, validations, config["eval.ks"], table)
        else:
            evaluation = evaluate_ranking(final, ValidationSet((), ()), (), table)
        tasks = _prediction_tasks(config, prep.vocab)
        if tasks:
            evaluation.predictive = predictive_eval(prep.encoded, emb, prep.vocab, tasks,
                                                    config["eval.l2"], config["eval.max_iter"])
        write_report(evaluation, ctx.path("evaluation.txt"))
    removed = [prep.vocab[f].name for f, _ in final.removed]
    return ctx.finish({"removed_unstable": removed})


GRID_COLUMNS = ("window_days", "dim", "alpha", "eigen_weight", "score", "status", "error")


def _grid_row(r: GridResult) -> list:
    c = r.config
    return [c.window_days, c.dim, repr(float(c.alpha)), repr(float(c.eigen_weight)),
            "" if r.score is None else repr(float(r.score)), r.status, r.error]


def _read_grid_rows(path, base: SppmiConfig) -> dict[tuple, GridResult]:
    done = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                cfg = SppmiConfig(int(row["window_days"]), int(row["dim"]), float(row["alpha"]),
                                  float(row["eigen_weight"]), base.shift, base.seed, base.count_mode)
                score = float(row["score"]) if row["score"] else None
            except (KeyError, TypeError, ValueError):
                continue  # torn last line of an interrupted run
            done[grid_key(cfg)] = GridResult(cfg, score, row["status"], row["error"])
    return done


def cmd_grid(config: RunConfig, on_result: Callable[[GridResult], None] | None = None) -> dict:
    """Score every grid point, resuming from a previous interrupted run when possible.

    Progress is appended to ``grid_scores.csv.partial`` next to a
    ``grid_state.json`` holding the hash of every setting that affects the
    scores; a rerun with the same hash skips the points already recorded.
    """
    config.check_paths()
    grid = read_grid_file(config["paths.grid"] or data_path("paper_grid.cfg"))
    base = config.sppmi()
    configs = expand_grid(grid, base)
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    relevant = [k for k in KEYS if not k.startswith(("sppmi.window_days", "sppmi.dim", "sppmi.alpha",
                                                     "sppmi.eigen_weight", "stability.", "ablate.",
                                                     "threads", "paths.out", "paths.grid"))]
    state = {"config_hash": config.hash(relevant),
             "grid": {k: list(v) for k, v in sorted(grid.items())}}
    state_path, partial = out / "grid_state.json", out / "grid_scores.csv.partial"
    completed: dict[tuple, GridResult] = {}
    if state_path.exists() and partial.exists():
        if json.loads(state_path.read_text()) == state:
            completed = _read_grid_rows(partial, base)
            log.info("resuming grid: %d points already scored", len(completed))
    state_path.write_text(json.dumps(state, sort_keys=True) + "\n")
    with open(partial, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_COLUMNS)
        for r in completed.values():
            writer.writerow(_grid_row(r))
    ctx = RunContext(config, "grid")
    ctx.outputs.append("grid_scores.csv")
    prep = prepare(ctx, write=False)
    computed = []

    def record(r: GridResult):
        computed.append(r)
        with open(partial, "a", newline="") as fh:
            csv.writer(fh).writerow(_grid_row(r))
        if on_result is not None:
            on_result(r)

    with ctx.stage("grid"):
        best, table = hyperparameter_search(
            prep.encoded, prep.vocab, configs, ValidationSet.from_vocabulary(prep.vocab),
            prep.referentials, prep.candidates, completed, record, config["threads"])
    with ctx.stage("write"):
        with open(partial, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(GRID_COLUMNS)
            for r in table:
                writer.writerow(_grid_row(r))
        lines = [f"sppmi.{k} = {getattr(best, k)}" for k in ("window_days", "dim", "alpha",
                                                             "eigen_weight")]
        ctx.path("best_config.cfg").write_text("\n".join(lines) + "\n")
    state_path.unlink()
    best_score = next(r.score for r in table if r.config == best)
    return ctx.finish({"grid_points": len(table), "computed_points": len(computed),
                       "best": {**{k: getattr(best, k) for k in ("window_days", "dim", "alpha",
                                                                 "eigen_weight")},
                                "score": best_score}})


def cmd_ablate(config: RunConfig) -> dict:
    config.check_paths()
    ctx = RunContext(config, "ablate")
    prep = prepare(ctx, write=False)
    with ctx.stage("ablate"):
        positives = ValidationSet.from_vocabulary(prep.vocab).positives
        rows = ablation_cohort_size(prep.encoded, prep.vocab, config["ablate.fractions"],
                                    config.sppmi(), prep.referentials, prep.candidates, positives,
                                    config["ablate.k"], derive_seed(config["seed"], "ablate"))
        write_ablation(rows, ctx.path("ablation.csv"), config["ablate.k"])
    return ctx.finish()


def cmd_project(config: RunConfig) -> dict:
    config.check_paths()
    ctx = RunContext(config, "project")
    prep = prepare(ctx, write=False)
    emb = _embed(ctx, prep, write=False)
    with ctx.stage("project"):
        proj = project_2d(emb, prep.vocab, derive_seed(config["seed"], "project"))
        write_projection(proj, prep.vocab, ctx.path("projection.csv"))
    return ctx.finish()
