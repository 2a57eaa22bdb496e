"""Feature vocabulary: raw codes -> analysis features.

Diagnosis features group ICD-10 codes by their three-character stem, except
for codes in chapters XVIII, XIX and XXI which are dropped.  Declared features
(mapping-file rows or granular overrides) win over the stem grouping by
longest-prefix match; the residual stem feature still catches the codes of
that stem that no declared prefix covers.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .cohort import CODE_SYSTEMS, normalize_code
from .errors import DataError

VOCAB_HEADER = ("feature_name", "kind", "code_system", "code_prefix", "rankable", "role")
ROLES_HEADER = ("feature_name", "role")

EXCLUDED_CHAPTERS = frozenset({"XVIII", "XIX", "XXI"})
EXTERNAL_CAUSES_CHAPTER = "XX"
UNRANKABLE_PHRASES = ("other", "unspecified", "in diseases classified elsewhere")

# (first stem, chapter); a stem belongs to the last chapter whose start <= stem.
# ICD-10-CM ranges; chapter XXII (U codes) sits between XIX and XX alphabetically.
_CHAPTER_STARTS = (
    ("A00", "I"), ("C00", "II"), ("D50", "III"), ("E00", "IV"), ("F00", "V"),
    ("G00", "VI"), ("H00", "VII"), ("H60", "VIII"), ("I00", "IX"), ("J00", "X"),
    ("K00", "XI"), ("L00", "XII"), ("M00", "XIII"), ("N00", "XIV"), ("O00", "XV"),
    ("P00", "XVI"), ("Q00", "XVII"), ("R00", "XVIII"), ("S00", "XIX"), ("U00", "XXII"),
    ("V00", "XX"), ("Z00", "XXI"),
)
_CHAPTER_KEYS = [s for s, _ in _CHAPTER_STARTS]

GENDER_FEATURES = ("gender_M", "gender_F")
AGE_BUCKETS = ((18, 27, "18-27"), (28, 37, "28-37"), (38, 47, "38-47"),
               (48, 57, "48-57"), (58, 67, "58-67"), (68, None, "67+"))
AGE_FEATURES = tuple(f"age_{label}" for _, _, label in AGE_BUCKETS)


class FeatureKind(str, Enum):
    DIAGNOSIS = "DIAGNOSIS"
    PRESCRIPTION = "PRESCRIPTION"
    PROCEDURE = "PROCEDURE"
    DEMOGRAPHIC = "DEMOGRAPHIC"


class Role(str, Enum):
    NONE = "NONE"
    REFERENTIAL = "REFERENTIAL"
    POSITIVE_VALIDATION = "POSITIVE_VALIDATION"
    NEGATIVE_VALIDATION = "NEGATIVE_VALIDATION"


def icd10_chapter(code: str) -> str | None:
    """Roman-numeral ICD-10 chapter of a code or stem, None if not ICD-10 shaped."""
    code = normalize_code(code)
    if not code or not code[0].isalpha():
        return None
    i = bisect.bisect_right(_CHAPTER_KEYS, code[:3]) - 1
    return _CHAPTER_STARTS[i][1] if i >= 0 else None


def bucket_age(age: int) -> str:
    """Age-bucket label for an adult age, e.g. 30 -> "28-37", 70 -> "67+"."""
    if age < 18:
        raise ValueError(f"age {age} is below the adult cohort minimum of 18")
    for lo, hi, label in AGE_BUCKETS:
        if hi is None or age <= hi:
            return label
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class FeatureDef:
    name: str
    kind: FeatureKind
    code_patterns: tuple[tuple[str, str], ...] = ()
    rankable: bool = True
    role: Role = Role.NONE

    def __post_init__(self):
        if self.kind is FeatureKind.DEMOGRAPHIC and self.code_patterns:
            raise DataError(f"demographic feature {self.name!r} cannot carry code patterns")
        if self.role is not Role.NONE and self.kind is not FeatureKind.DIAGNOSIS:
            raise DataError(f"{self.name!r}: only diagnosis features can carry role {self.role.value}")

    @property
    def chapter(self) -> str | None:
        for system, prefix in self.code_patterns:
            if system == "ICD10":
                return icd10_chapter(prefix)
        return None


class FeatureVocabulary:
    """Immutable list of features plus a (code_system, prefix) -> id index."""

    def __init__(self, entries: Iterable[FeatureDef]):
        self.entries: tuple[FeatureDef, ...] = tuple(entries)
        self.by_name: dict[str, int] = {}
        index: dict[tuple[str, str], int] = {}
        for fid, f in enumerate(self.entries):
            if f.name in self.by_name:
                raise DataError(f"duplicate feature name {f.name!r}")
            self.by_name[f.name] = fid
            for system, prefix in f.code_patterns:
                key = (system, normalize_code(prefix, system))
                if key in index:
                    other = self.entries[index[key]].name
                    raise DataError(f"pattern {key} declared by both {other!r} and {f.name!r}")
                index[key] = fid
        self.code_index: Mapping[tuple[str, str], int] = index
        self._max_len = max((len(p) for _, p in index), default=0)
        missing = [n for n in GENDER_FEATURES + AGE_FEATURES if n not in self.by_name]
        if missing:
            raise DataError(f"vocabulary lacks demographic features {missing}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, fid: int) -> FeatureDef:
        return self.entries[fid]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.entries]

    def id(self, name: str) -> int:
        return self.by_name[name]

    def gender_feature(self, gender: str) -> int:
        return self.by_name[f"gender_{gender}"]

    def age_feature(self, age: int) -> int:
        return self.by_name[f"age_{bucket_age(age)}"]

    def with_role(self, role: Role) -> list[int]:
        return [i for i, f in enumerate(self.entries) if f.role is role]

    @property
    def referentials(self) -> list[int]:
        return self.with_role(Role.REFERENTIAL)

    @property
    def positives(self) -> list[int]:
        return self.with_role(Role.POSITIVE_VALIDATION)

    @property
    def negatives(self) -> list[int]:
        return self.with_role(Role.NEGATIVE_VALIDATION)

    def map_code(self, code_system: str, code: str) -> int | None:
        if not code:
            return None
        code = normalize_code(code, code_system)
        if code_system == "ICD10" and icd10_chapter(code) in EXCLUDED_CHAPTERS:
            return None
        for n in range(min(len(code), self._max_len), 0, -1):
            fid = self.code_index.get((code_system, code[:n]))
            if fid is not None:
                return fid
        return None

    def matched_prefix(self, code_system: str, code: str) -> str | None:
        fid = self.map_code(code_system, code)
        if fid is None:
            return None
        code = normalize_code(code, code_system)
        return max((normalize_code(p, s) for s, p in self.entries[fid].code_patterns
                    if s == code_system and code.startswith(normalize_code(p, s))), key=len)

    def with_roles(self, roles: Mapping[str, Role]) -> "FeatureVocabulary":
        """Copy with the given feature roles set (unknown names raise)."""
        unknown = sorted(set(roles) - set(self.by_name))
        if unknown:
            raise DataError(f"roles reference unknown features: {unknown}")
        return FeatureVocabulary(
            replace(f, role=Role(roles[f.name])) if f.name in roles else f for f in self.entries)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(VOCAB_HEADER)
            for f in self.entries:
                if f.kind is FeatureKind.DEMOGRAPHIC:
                    continue
                for system, prefix in f.code_patterns:
                    w.writerow((f.name, f.kind.value, system, prefix,
                                str(f.rankable).lower(), f.role.value))


def map_code(vocab: FeatureVocabulary, code_system: str, code: str) -> int | None:
    """Feature id for a raw code by longest declared prefix, or None if unmapped."""
    return vocab.map_code(code_system, code)


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "1", "yes", "y", ""):
        return True
    if s in ("false", "0", "no", "n"):
        return False
    raise DataError(f"not a boolean: {s!r}")


def read_mapping_file(path) -> list[FeatureDef]:
    """Parse a vocabulary mapping file into FeatureDefs (rows grouped by name)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    grouped: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != VOCAB_HEADER:
            raise DataError(f"{path}: unparseable header {header!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(VOCAB_HEADER):
                raise DataError(f"{path}:{reader.line_num}: expected {len(VOCAB_HEADER)} fields")
            name, kind, system, prefix, rankable, role = (c.strip() for c in row)
            try:
                kind_e, role_e = FeatureKind(kind), Role(role or "NONE")
            except ValueError as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
            if system not in CODE_SYSTEMS or not prefix:
                raise DataError(f"{path}:{reader.line_num}: bad code system or empty prefix")
            g = grouped.setdefault(name, dict(kind=kind_e, patterns=[], rankable=_parse_bool(rankable),
                                              role=role_e))
            if g["kind"] is not kind_e or g["role"] is not role_e:
                raise DataError(f"{path}:{reader.line_num}: inconsistent kind/role for {name!r}")
            g["patterns"].append((system, normalize_code(prefix, system)))
    return [FeatureDef(n, g["kind"], tuple(g["patterns"]), g["rankable"], g["role"])
            for n, g in grouped.items()]


def read_roles_file(path) -> dict[str, Role]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    roles = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and tuple(h.strip() for h in header) != ROLES_HEADER:
            raise DataError(f"{path}: unparseable header {header!r}")
        for row in reader:
            if row:
                roles[row[0].strip()] = Role(row[1].strip())
    return roles


def demographic_features() -> list[FeatureDef]:
    return [FeatureDef(n, FeatureKind.DEMOGRAPHIC) for n in GENDER_FEATURES + AGE_FEATURES]


def build_vocabulary(
    mapping_files: Iterable = (),
    granular_overrides: Mapping[str, Iterable[str]] | None = None,
    icd10_codes: Iterable[str] = (),
) -> FeatureVocabulary:
    """Assemble the feature vocabulary.

    Parameters
    ----------
    mapping_files : paths of vocabulary mapping files (declared features of
        any kind; prescription and procedure classes come only from here).
    granular_overrides : feature name -> ICD-10 prefixes for clinician
        defined diagnosis groupings.
    icd10_codes : observed ICD-10 codes; every stem not already declared
        (and not in an excluded chapter) becomes its own diagnosis feature.
    """
    declared: list[FeatureDef] = []
    for path in mapping_files:
        declared.extend(read_mapping_file(path))
    for name, prefixes in (granular_overrides or {}).items():
        patterns = tuple(("ICD10", normalize_code(p)) for p in prefixes)
        declared.append(FeatureDef(name, FeatureKind.DIAGNOSIS, patterns))

    seen: dict[tuple[str, str], str] = {}
    for f in declared:
        for pat in f.code_patterns:
            if pat in seen:
                raise DataError(f"pattern {pat} declared by both {seen[pat]!r} and {f.name!r}")
            seen[pat] = f.name

    short_icd = [p for s, p in seen if s == "ICD10" and len(p) <= 3]
    names = {f.name for f in declared}
    stems = set()
    for code in icd10_codes:
        stem = normalize_code(code)[:3]
        if len(stem) < 3 or icd10_chapter(stem) in (None, *EXCLUDED_CHAPTERS):
            continue
        if any(stem.startswith(p) for p in short_icd) or stem in names:
            continue
        stems.add(stem)
    auto = [FeatureDef(s, FeatureKind.DIAGNOSIS, (("ICD10", s),)) for s in sorted(stems)]

    if not declared and not auto:
        raise DataError("empty vocabulary: no declared features and no ICD-10 codes")
    return FeatureVocabulary(declared + auto + demographic_features())


def rankable_features(vocab: FeatureVocabulary) -> set[int]:
    """Diagnosis features eligible as candidate indications."""
    out = set()
    for fid, f in enumerate(vocab.entries):
        if f.kind is not FeatureKind.DIAGNOSIS or not f.rankable or f.role is Role.REFERENTIAL:
            continue
        lname = f.name.lower()
        if any(phrase in lname for phrase in UNRANKABLE_PHRASES):
            continue
        if f.chapter == EXTERNAL_CAUSES_CHAPTER:
            continue
        out.add(fid)
    return out


def data_path(name: str) -> Path:
    """Path of a bundled data file (e.g. "table1_roles.csv")."""
    return Path(str(resources.files("indfind") / "data" / name))


def inclusion_code_sets(path=None) -> tuple[tuple[str, ...], ...]:
    """Cohort-entry disease prefix sets (bundled default: the 17 inclusion diseases)."""
    path = Path(path) if path else data_path("inclusion_diseases.csv")
    groups: dict[str, list[str]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["disease"], []).append(normalize_code(row["icd10_prefix"]))
    return tuple(tuple(v) for v in groups.values())
