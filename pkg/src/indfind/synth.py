"""Seeded synthetic claims-like cohorts with planted pathway structure.

Each patient joins every latent pathway independently with probability
``pathway_prob``.  At each visit, every active pathway emits
Poisson(``pathway_emission_rate``) codes from its own feature pool and the
background emits Poisson(``background_rate``) codes from the shared pool, so
features of one pathway co-occur more often than features of different
pathways.  Pathway 0 (by default) holds the referentials and the positive
validations; negatives are taken from other pathways.

Two optional extras support evaluation:

* a *volatile* pathway with 1% support.  Its first ``volatile_anchors``
  members join the referential pathway and carry the volatile code at every
  visit; the others carry it once, next to a code from an unrelated pathway.
  Co-occurrence is counted once per window, so the anchors alone set the
  feature's similarity to the referentials and it swings with how many of
  them a subsample contains;
* a precursor -> target pair, where the target tends to follow the precursor
  within six months, for the predictive task.

The feature catalogue (names, codes, roles) depends only on the structural
config fields, never on ``seed``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cohort import EVENT_HEADER, OBSERVATION_START, PATIENT_HEADER
from .errors import ConfigError
from .features import ROLES_HEADER, VOCAB_HEADER

_STEM_LETTERS = "ABCDEFGHIJKLMNQ"  # chapters that are neither excluded nor pregnancy-related
_EXTERNAL_LETTERS = "VWXY"  # chapter XX
_NOISE_CODES = ("R05", "R0600", "R51", "R5383", "Z0000", "Z23", "Z1231", "R7309")


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 10_000
    n_pathways: int = 8
    features_per_pathway: int = 10
    n_background_features: int = 400
    pathway_prob: float = 0.12
    pathway_emission_rate: float = 1.0  # codes per visit per active pathway
    background_rate: float = 1.0  # codes per visit
    noise_rate: float = 0.3  # excluded-chapter codes per visit
    observation_days: int = 1826
    visit_rate: float = 6.0  # visits per year
    referential_pathway: int = 0
    n_referentials: int = 3
    positive_features: tuple[str, ...] | None = None  # None: pick from the catalogue
    negative_features: tuple[str, ...] | None = None
    volatile_support: float = 0.01
    volatile_anchors: int = 3
    volatile_counter_visits: int = 1
    volatile_anchor_links: int = 3
    volatile_counter_links: int = 1
    volatile_visit_scale: float = 1.0  # visit-rate multiplier for unanchored volatile patients
    precursor_prob: float = 0.15
    target_given_precursor: float = 0.5
    target_baseline: float = 0.03
    filter_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 0:
            raise ConfigError("n_patients must be >= 0")
        if self.n_pathways < 2 or self.features_per_pathway < 1:
            raise ConfigError("need at least 2 pathways with at least one feature")
        for name in ("pathway_emission_rate", "background_rate", "noise_rate", "visit_rate",
                     "pathway_prob", "volatile_support", "precursor_prob", "volatile_visit_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.visit_rate * self.observation_days / 365.0 < 2:
            raise ConfigError("fewer than two expected visits over the observation window")
        if not 0 <= self.referential_pathway < self.n_pathways:
            raise ConfigError("referential_pathway out of range")
        if self.n_referentials >= self.features_per_pathway:
            raise ConfigError("referentials must leave room for other pathway features")
        cat = _catalog(self)
        ref_pool = {f["name"] for f in cat if f["group"] == ("pathway", self.referential_pathway)}
        other = {f["name"] for f in cat if f["group"][0] == "pathway"
                 and f["group"][1] != self.referential_pathway}
        if not set(self.positives) <= ref_pool:
            raise ConfigError("positive features must come from the referential pathway")
        if not set(self.negatives) <= other:
            raise ConfigError("negative features must come from non-referential pathways")
        if set(self.positives) & set(self.referential_names):
            raise ConfigError("a referential cannot also be a validation")

    # names resolved against the catalogue --------------------------------

    @property
    def referential_names(self) -> tuple[str, ...]:
        pool = _pathway_names(self, self.referential_pathway)
        return tuple(pool[: self.n_referentials])

    @property
    def positives(self) -> tuple[str, ...]:
        if self.positive_features is not None:
            return tuple(self.positive_features)
        pool = _pathway_names(self, self.referential_pathway)
        return tuple(pool[self.n_referentials: self.n_referentials + 5])

    @property
    def negatives(self) -> tuple[str, ...]:
        if self.negative_features is not None:
            return tuple(self.negative_features)
        others = [p for p in range(self.n_pathways) if p != self.referential_pathway]
        return tuple(_pathway_names(self, p)[0] for p in others[:5])

    @property
    def volatile_name(self) -> str:
        return _named(self, "volatile")

    @property
    def precursor_name(self) -> str:
        return _named(self, "precursor")

    @property
    def target_name(self) -> str:
        return _named(self, "target")


def _allowed_stems() -> list[str]:
    stems = [f"{c}{i:02d}" for c in _STEM_LETTERS for i in range(100)]
    # fixed stride permutation so neighbouring features do not share a letter
    stride = 37
    return [stems[(i * stride) % len(stems)] for i in range(len(stems))]


def _catalog(config: SynthConfig) -> list[dict]:
    """Feature catalogue: name, kind, code patterns, group, emitted codes."""
    stems = iter(_allowed_stems())
    cat = []

    def diag(name_fmt, group, prefix_suffix=""):
        stem = next(stems)
        prefix = stem + prefix_suffix
        name = name_fmt.format(stem=prefix)
        codes = [prefix + str(d) for d in range(3)] if not prefix_suffix else \
            [prefix + str(d) for d in range(2)]
        cat.append(dict(name=name, kind="DIAGNOSIS", system="ICD10", patterns=[prefix],
                        group=group, codes=codes))
        return stem

    for p in range(config.n_pathways):
        for j in range(config.features_per_pathway):
            if p == config.referential_pathway and j == 0:
                # granular override below a stem, like a 4-character referential code
                stem = diag("{stem} pathway %d condition %d" % (p, j), ("pathway", p), "0")
                cat.append(dict(name=f"{stem} residual condition", kind="DIAGNOSIS",
                                system="ICD10", patterns=[stem], group=("background",),
                                codes=[stem + "8", stem + "9"]))
            else:
                diag("{stem} pathway %d condition %d" % (p, j), ("pathway", p))
    for j in range(config.n_background_features):
        if j % 10 == 3:
            fmt = "{stem} other specified background disorder %d" % j
        elif j % 10 == 7:
            fmt = "{stem} background disorder %d, unspecified" % j
        else:
            fmt = "{stem} background disorder %d" % j
        diag(fmt, ("background",))
    for j, letter in enumerate(_EXTERNAL_LETTERS):
        stem = f"{letter}{10 + j:02d}"
        cat.append(dict(name=f"{stem} external cause {j}", kind="DIAGNOSIS", system="ICD10",
                        patterns=[stem], group=("background",), codes=[stem + "0", stem + "1"]))
    diag("{stem} volatile condition", ("volatile",))
    diag("{stem} precursor condition", ("precursor",))
    diag("{stem} target condition", ("target",))

    ndc = 10_000_000_000
    for p in range(config.n_pathways):
        codes = [str(ndc + 100 * p + k) for k in range(3)]
        cat.append(dict(name=f"Drug class {p}", kind="PRESCRIPTION", system="RAW_NDC",
                        patterns=codes, group=("rx", p), codes=codes))
        cpt = [str(80000 + 10 * p + k) for k in range(2)]
        cat.append(dict(name=f"Procedure class {p}", kind="PROCEDURE", system="RAW_CPT",
                        patterns=cpt, group=("proc", p), codes=cpt))
    for j in range(20):
        codes = [str(ndc + 5000 + 10 * j + k) for k in range(2)]
        cat.append(dict(name=f"Drug class background {j}", kind="PRESCRIPTION", system="RAW_NDC",
                        patterns=codes, group=("background_rx",), codes=codes))
    return cat


def _pathway_names(config, p) -> list[str]:
    return [f["name"] for f in _catalog(config) if f["group"] == ("pathway", p)]


def _named(config, group) -> str:
    return next(f["name"] for f in _catalog(config) if f["group"] == (group,))


# --------------------------------------------------------------------------
# generation


def _visit_days(rng, start, stop, rate_per_day) -> np.ndarray:
    """Integer visit days in [start, stop) from exponential inter-arrival gaps."""
    days = []
    t = start + int(rng.integers(0, 60))
    while t < stop:
        days.append(t)
        t += 1 + int(rng.exponential(1.0 / rate_per_day))
    return np.asarray(days, dtype=np.int64)


def _generate(config: SynthConfig):
    """Yield (patient rows, event rows) per patient in a fixed draw order."""
    rng = np.random.default_rng(config.seed)
    cat = _catalog(config)
    pools = {}
    for f in cat:
        pools.setdefault(f["group"], []).append(f)
    pathway_pools = [pools[("pathway", p)] for p in range(config.n_pathways)]
    background = pools[("background",)]
    bg_weights = 1.0 / (np.arange(len(background)) + 20.0)
    bg_weights /= bg_weights.sum()
    ref_names = set(config.referential_names)
    ref_feats = [f for f in pathway_pools[config.referential_pathway] if f["name"] in ref_names]
    volatile, precursor, target = pools[("volatile",)][0], pools[("precursor",)][0], pools[("target",)][0]
    counter = max(p for p in range(config.n_pathways) if p != config.referential_pathway)
    rate = config.visit_rate / 365.0
    n_anchored = 0
    obs_end = config.observation_days
    start_ord = OBSERVATION_START.toordinal()

    def day_str(d):
        return dt.date.fromordinal(start_ord + int(d)).isoformat()

    def pick(pool_feats, weights=None):
        f = pool_feats[int(rng.choice(len(pool_feats), p=weights))] if weights is not None \
            else pool_feats[int(rng.integers(len(pool_feats)))]
        return f["codes"][int(rng.integers(len(f["codes"])))], f["system"]

    for i in range(config.n_patients):
        pid = f"P{i:06d}"
        is_volatile = float(rng.random()) < config.volatile_support
        gender = "MF"[int(rng.integers(2))]
        age = int(rng.integers(18, 86))
        kind = "normal"
        if config.filter_noise and not (is_volatile and n_anchored < config.volatile_anchors):
            u = float(rng.random())
            kind = ("minor" if u < 0.02 else "short_enroll" if u < 0.05 else
                    "pregnancy" if u < 0.06 else "burst" if u < 0.065 else "normal")
        if kind == "minor":
            age = int(rng.integers(10, 18))
        birth_year = OBSERVATION_START.year - age
        if kind == "short_enroll":
            s = int(rng.integers(0, obs_end - 400))
            spans = [(s, s + int(rng.integers(200, 330)))]
        elif float(rng.random()) < 0.1:
            gap = int(rng.integers(500, 900))
            spans = [(0, gap), (gap + int(rng.integers(30, 90)), obs_end - 1)]
        else:
            spans = [(0, obs_end - 1)]

        active = np.flatnonzero(rng.random(config.n_pathways) < config.pathway_prob)
        has_pre = float(rng.random()) < config.precursor_prob
        gets_target = float(rng.random()) < (config.target_given_precursor if has_pre
                                             else config.target_baseline)
        anchored = is_volatile and n_anchored < config.volatile_anchors
        n_anchored += anchored
        if anchored:
            active = np.union1d(active, [config.referential_pathway])
        elif is_volatile:
            # keep the unanchored volatile patients away from the referentials
            active = active[active != config.referential_pathway]

        own_rate = rate * config.volatile_visit_scale if is_volatile and not anchored else rate
        visits = np.concatenate([_visit_days(rng, a, b + 1, own_rate) for a, b in spans])
        events: list[tuple[int, str, str]] = []
        for v in visits:
            for p in active:
                for _ in range(int(rng.poisson(config.pathway_emission_rate))):
                    events.append((v, *pick(pathway_pools[p])))
                if float(rng.random()) < 0.3:
                    events.append((v, *pick(pools[("rx", int(p))])))
                if float(rng.random()) < 0.15:
                    events.append((v, *pick(pools[("proc", int(p))])))
            for _ in range(int(rng.poisson(config.background_rate))):
                events.append((v, *pick(background, bg_weights)))
            for _ in range(int(rng.poisson(config.noise_rate))):
                events.append((v, _NOISE_CODES[int(rng.integers(len(_NOISE_CODES)))], "ICD10"))
            if float(rng.random()) < 0.2:
                events.append((v, *pick(pools[("background_rx",)])))
        if anchored:
            # the few anchored patients alone tie the volatile feature to the
            # referentials, so its similarity hinges on which of them a
            # subsample happens to contain
            for v in visits:
                events.append((v, *pick([volatile])))
                for _ in range(config.volatile_anchor_links):
                    events.append((v, *pick(pathway_pools[config.referential_pathway])))
        elif is_volatile and len(visits):
            for v in visits[rng.permutation(len(visits))[:config.volatile_counter_visits]]:
                events.append((v, *pick([volatile])))
                for _ in range(config.volatile_counter_links):
                    events.append((v, *pick(pathway_pools[counter])))
        if len(visits) >= 2 and (has_pre or gets_target):
            lo, hi = int(visits[0]), int(visits[-1])
            if gets_target and hi - lo > 240:
                onset = int(rng.integers(lo + 200, hi + 1))
                events.append((onset, *pick([target])))
                events.append((int(rng.integers(onset + 1, onset + 200)), *pick([target])))
                if has_pre:
                    for _ in range(2):
                        events.append((onset - int(rng.integers(5, 170)), *pick([precursor])))
            elif has_pre:
                for _ in range(2):
                    events.append((int(rng.integers(lo, hi + 1)), *pick([precursor])))
        if kind == "pregnancy" and len(visits):
            events.append((int(visits[int(rng.integers(len(visits)))]), "O200", "ICD10"))
        if kind == "burst" and len(visits):
            v = int(visits[0])
            for f in background[:55]:
                events.append((v, f["codes"][0], f["system"]))

        last = spans[-1][1]
        events = [(min(max(d, spans[0][0]), last), c, s) for d, c, s in events]
        events.sort()
        patient_rows = [(pid, birth_year, gender, day_str(a), day_str(b)) for a, b in spans]
        event_rows = [(pid, day_str(d), c, s) for d, c, s in events]
        yield patient_rows, event_rows


def planted_truth(config: SynthConfig) -> list[tuple[str, str]]:
    """(positive, negative) pairs: each positive should out-rank each negative."""
    return [(p, n) for p in config.positives for n in config.negatives]


def write_vocabulary_file(config: SynthConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(VOCAB_HEADER)
        for f in _catalog(config):
            for prefix in f["patterns"]:
                out.writerow((f["name"], f["kind"], f["system"], prefix, "true", "NONE"))


def write_roles_file(config: SynthConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(ROLES_HEADER)
        out.writerows((n, "REFERENTIAL") for n in config.referential_names)
        out.writerows((n, "POSITIVE_VALIDATION") for n in config.positives)
        out.writerows((n, "NEGATIVE_VALIDATION") for n in config.negatives)


def write_truth_constraints(config: SynthConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("positive_feature", "negative_feature"))
        out.writerows(planted_truth(config))


def generate_cohort(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Write patients, events, vocabulary, roles and truth-constraint files.

    Output is byte-identical for identical configs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("patients", "events", "vocabulary", "roles",
                                          "truth_constraints")}
    with open(paths["patients"], "w", newline="") as pf, open(paths["events"], "w", newline="") as ef:
        pw, ew = csv.writer(pf), csv.writer(ef)
        pw.writerow(PATIENT_HEADER)
        ew.writerow(EVENT_HEADER)
        for patient_rows, event_rows in _generate(config):
            pw.writerows(patient_rows)
            ew.writerows(event_rows)
    write_vocabulary_file(config, paths["vocabulary"])
    write_roles_file(config, paths["roles"])
    write_truth_constraints(config, paths["truth_constraints"])
    meta = asdict(config)
    meta.update(referentials=list(config.referential_names), positives=list(config.positives),
                negatives=list(config.negatives), volatile=config.volatile_name,
                precursor=config.precursor_name, target=config.target_name)
    paths["synth_config"] = out / "synth_config.json"
    paths["synth_config"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
