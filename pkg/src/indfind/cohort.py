"""Patient event ingestion and cohort inclusion/exclusion filtering.

Patients and events are read from two delimited files (see ``PATIENT_HEADER``
and ``EVENT_HEADER``).  ``apply_cohort_filters`` applies the inclusion and
exclusion criteria in a fixed order and records a waterfall of the number of
patients remaining after each one.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CODE_SYSTEMS = ("ICD10", "RX_CLASS", "PROC_CLASS", "RAW_NDC", "RAW_CPT")
GENDERS = ("M", "F")

OBSERVATION_START = dt.date(2018, 1, 1)
OBSERVATION_END = dt.date(2022, 12, 31)

PATIENT_HEADER = ("patient_id", "birth_year", "gender", "enroll_start", "enroll_end")
EVENT_HEADER = ("patient_id", "date", "code", "code_system")
WATERFALL_HEADER = ("criterion", "patients_remaining")

CRITERIA_ORDER = (
    "age",
    "enrollment",
    "two_visits",
    "pregnancy_exclusion",
    "diagnoses_per_day",
    "clinical_inclusion",
)


def normalize_code(code: str, code_system: str = "ICD10") -> str:
    """Upper-case a code and strip the ICD-10 dot ("r07.4" -> "R074")."""
    code = code.strip().upper()
    if code_system == "ICD10":
        code = code.replace(".", "")
    return code


def code_matches(code: str, pattern: str) -> bool:
    """True if an ICD-10 ``code`` falls under ``pattern``.

    ``pattern`` is either a plain prefix ("L40") or an inclusive range of
    stems such as "O00-O99", compared on the first ``len(lo)`` characters.
    """
    if "-" in pattern:
        lo, hi = pattern.split("-", 1)
        stem = code[: len(lo)]
        return len(stem) == len(lo) and lo <= stem <= hi
    return code.startswith(pattern)


class ClinicalEvent(NamedTuple):
    patient_id: str
    date: dt.date
    code: str
    code_system: str


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    birth_year: int
    gender: str
    enrollment_spans: tuple[tuple[dt.date, dt.date], ...]
    events: tuple[ClinicalEvent, ...] = ()

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise DataError(f"{self.patient_id}: unknown gender {self.gender!r}")
        spans = self.enrollment_spans
        for start, end in spans:
            if start > end:
                raise DataError(f"{self.patient_id}: enrollment span {start}..{end} is reversed")
        for (_, prev_end), (start, _) in zip(spans, spans[1:]):
            if start <= prev_end:
                raise DataError(f"{self.patient_id}: overlapping enrollment spans")
        for a, b in zip(self.events, self.events[1:]):
            if b.date < a.date:
                raise DataError(f"{self.patient_id}: events not sorted by date")

    def age_at(self, when: dt.date) -> int:
        return when.year - self.birth_year


@dataclass
class EventStore:
    """Loaded patients keyed by id, plus ingestion diagnostics."""

    patients: dict[str, PatientRecord]
    bad_rows: list[tuple[str, int, str]] = field(default_factory=list)
    events_outside_enrollment: int = 0

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_events(self) -> int:
        return sum(len(p.events) for p in self.patients.values())

    def records(self) -> list[PatientRecord]:
        return [self.patients[k] for k in sorted(self.patients)]


@dataclass(frozen=True)
class CohortCriteria:
    min_age: int = 18
    min_continuous_enrollment: int = 365
    require_two_visits_apart: int = 365
    max_diagnoses_per_day: int = 50
    exclusion_code_prefixes: tuple[str, ...] = ("O00-O99", "P00-P96")
    inclusion_code_sets: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        for name in ("min_age", "min_continuous_enrollment", "require_two_visits_apart",
                     "max_diagnoses_per_day"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientRecord, ...]
    waterfall: tuple[tuple[str, int], ...]

    def __post_init__(self):
        counts = [n for _, n in self.waterfall]
        if any(b > a for a, b in zip(counts, counts[1:])):
            raise ValueError("waterfall counts must be non-increasing")
        if counts and counts[-1] != len(self.patients):
            raise ValueError("final waterfall count must equal the cohort size")

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def patient_ids(self) -> tuple[str, ...]:
        return tuple(p.patient_id for p in self.patients)


# --------------------------------------------------------------------------
# ingestion


def _open_rows(path: Path, header: Sequence[str]):
    """Yield (line_number, row) for a delimited file, validating its header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        if tuple(c.strip() for c in first) != tuple(header):
            raise DataError(f"{path}: unparseable header {first!r}, expected {','.join(header)}")
        for row in reader:
            if not row:
                continue
            yield reader.line_num, row


def _merge_spans(spans: Iterable[tuple[dt.date, dt.date]]) -> tuple[tuple[dt.date, dt.date], ...]:
    """Sort spans and merge ones that overlap or touch (next start <= end + 1 day)."""
    merged: list[list[dt.date]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1] + dt.timedelta(days=1):
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((s, e) for s, e in merged)


def load_events(
    events_path,
    patients_path,
    *,
    skip_bad_rows: bool = False,
    skip_unknown_patients: bool = False,
    observation_window: tuple[dt.date, dt.date] = (OBSERVATION_START, OBSERVATION_END),
    drop_outside_enrollment: bool = False,
) -> EventStore:
    """Read the patient and event files into an :class:`EventStore`.

    Malformed rows raise :class:`DataError` unless ``skip_bad_rows`` is set,
    in which case they are counted in ``EventStore.bad_rows``.  Events
    outside every enrollment span are kept (and counted) unless
    ``drop_outside_enrollment`` is set.
    """
    bad: list[tuple[str, int, str]] = []

    def reject(path, line, reason):
        if not skip_bad_rows:
            raise DataError(f"{path}:{line}: {reason}")
        bad.append((str(path), line, reason))

    demographics: dict[str, tuple[int, str]] = {}
    spans: dict[str, list[tuple[dt.date, dt.date]]] = {}
    for line, row in _open_rows(patients_path, PATIENT_HEADER):
        if len(row) != len(PATIENT_HEADER):
            reject(patients_path, line, f"expected {len(PATIENT_HEADER)} fields, got {len(row)}")
            continue
        pid, birth, gender, start, end = (c.strip() for c in row)
        try:
            birth_year = int(birth)
            span = (dt.date.fromisoformat(start), dt.date.fromisoformat(end))
        except ValueError as exc:
            reject(patients_path, line, str(exc))
            continue
        if not pid or gender not in GENDERS or span[0] > span[1]:
            reject(patients_path, line, "empty id, unknown gender or reversed span")
            continue
        if demographics.setdefault(pid, (birth_year, gender)) != (birth_year, gender):
            reject(patients_path, line, f"conflicting demographics for {pid}")
            continue
        spans.setdefault(pid, []).append(span)

    lo, hi = observation_window
    events: dict[str, list[ClinicalEvent]] = {pid: [] for pid in demographics}
    unknown: set[str] = set()
    for line, row in _open_rows(events_path, EVENT_HEADER):
        if len(row) != len(EVENT_HEADER):
            reject(events_path, line, f"expected {len(EVENT_HEADER)} fields, got {len(row)}")
            continue
        pid, date_s, code, system = (c.strip() for c in row)
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError as exc:
            reject(events_path, line, str(exc))
            continue
        if system not in CODE_SYSTEMS or not code:
            reject(events_path, line, f"bad code or code system {system!r}")
            continue
        if not lo <= date <= hi:
            reject(events_path, line, f"date {date} outside observation window")
            continue
        if pid not in events:
            unknown.add(pid)
            continue
        events[pid].append(ClinicalEvent(pid, date, normalize_code(code, system), system))

    if unknown:
        listed = ", ".join(sorted(unknown)[:20])
        if not skip_unknown_patients:
            raise DataError(f"events reference unknown patients: {listed}")
        log.warning("skipped events for %d unknown patients: %s", len(unknown), listed)

    patients: dict[str, PatientRecord] = {}
    outside = 0
    for pid, (birth_year, gender) in demographics.items():
        merged = _merge_spans(spans[pid])
        evs = sorted(events[pid], key=lambda e: (e.date, e.code_system, e.code))
        keep = []
        for e in evs:
            if any(s <= e.date <= t for s, t in merged):
                keep.append(e)
            else:
                outside += 1
                if not drop_outside_enrollment:
                    keep.append(e)
        patients[pid] = PatientRecord(pid, birth_year, gender, merged, tuple(keep))
    if bad:
        log.warning("skipped %d malformed rows", len(bad))
    return EventStore(patients, bad, outside)


# --------------------------------------------------------------------------
# filtering


def _passes(p: PatientRecord, criterion: str, criteria: CohortCriteria, as_of: dt.date) -> bool:
    if criterion == "age":
        return p.age_at(as_of) >= criteria.min_age
    if criterion == "enrollment":
        return any((e - s).days + 1 >= criteria.min_continuous_enrollment
                   for s, e in p.enrollment_spans)
    if criterion == "two_visits":
        if not p.events:
            return False
        return (p.events[-1].date - p.events[0].date).days >= criteria.require_two_visits_apart
    if criterion == "pregnancy_exclusion":
        return not any(e.code_system == "ICD10"
                       and any(code_matches(e.code, pat) for pat in criteria.exclusion_code_prefixes)
                       for e in p.events)
    if criterion == "diagnoses_per_day":
        per_day: dict[dt.date, set[str]] = {}
        for e in p.events:
            if e.code_system == "ICD10":
                codes = per_day.setdefault(e.date, set())
                codes.add(e.code)
                if len(codes) > criteria.max_diagnoses_per_day:
                    return False
        return True
    if criterion == "clinical_inclusion":
        if not criteria.inclusion_code_sets:
            return True
        prefixes = [pat for group in criteria.inclusion_code_sets for pat in group]
        return any(e.code_system == "ICD10" and any(code_matches(e.code, pat) for pat in prefixes)
                   for e in p.events)
    raise KeyError(criterion)


def _first_failure(p, criteria, as_of) -> int:
    """Index of the first failed criterion, or len(CRITERIA_ORDER) if all pass."""
    for i, name in enumerate(CRITERIA_ORDER):
        if not _passes(p, name, criteria, as_of):
            return i
    return len(CRITERIA_ORDER)


def apply_cohort_filters(
    store: EventStore | Cohort,
    criteria: CohortCriteria = CohortCriteria(),
    as_of: dt.date | None = None,
    threads: int = 1,
) -> Cohort:
    """Keep the patients that satisfy every criterion, recording the waterfall.

    ``as_of`` (default: start of the observation window) is the date used for
    age.  Criteria are applied in ``CRITERIA_ORDER``.  Per-patient checks are
    independent, so ``threads > 1`` only changes how the work is split.
    """
    as_of = as_of or OBSERVATION_START
    if isinstance(store, Cohort):
        records = sorted(store.patients, key=lambda p: p.patient_id)
    else:
        records = store.records()

    def run(chunk):
        return [_first_failure(p, criteria, as_of) for p in chunk]

    if threads > 1 and len(records) > 1:
        size = -(-len(records) // threads)
        chunks = [records[i:i + size] for i in range(0, len(records), size)]
        with ThreadPoolExecutor(threads) as pool:
            failures = [f for part in pool.map(run, chunks) for f in part]
    else:
        failures = run(records)

    failures = np.asarray(failures, dtype=int)
    waterfall = [("loaded", len(records))]
    for i, name in enumerate(CRITERIA_ORDER):
        waterfall.append((name, int(np.sum(failures > i))))
    kept = tuple(p for p, f in zip(records, failures) if f == len(CRITERIA_ORDER))
    if not kept:
        warnings.warn("cohort filters removed every patient", RuntimeWarning, stacklevel=2)
    return Cohort(kept, tuple(waterfall))


def subsample_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted positions of a uniform random subset of ``round(fraction * n)`` of ``n``."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(np.floor(fraction * n + 0.5))
    if k >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=k, replace=False))


def subsample(cohort: Cohort, fraction: float, seed: int) -> Cohort:
    """Uniform random subset of ``round(fraction * N)`` patients, deterministic in ``seed``."""
    idx = subsample_indices(len(cohort), fraction, seed)
    patients = tuple(cohort.patients[i] for i in idx)
    return Cohort(patients, (("subsample", len(patients)),))


def write_waterfall(cohort: Cohort, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WATERFALL_HEADER)
        w.writerows(cohort.waterfall)
