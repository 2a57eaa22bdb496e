import csv
import datetime as dt
import warnings

import numpy as np
import pytest

from indfind.cohort import EVENT_HEADER, PATIENT_HEADER, ClinicalEvent, PatientRecord
from indfind.features import FeatureDef, FeatureKind, FeatureVocabulary, Role, demographic_features

D0 = dt.date(2018, 1, 1)


def day(n: int) -> dt.date:
    return D0 + dt.timedelta(days=n)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def make_patient(pid="P1", birth_year=1970, gender="F", spans=((0, 1825),), events=()):
    """events: iterable of (day offset, code[, code_system])."""
    evs = []
    for e in events:
        system = e[2] if len(e) > 2 else "ICD10"
        evs.append(ClinicalEvent(pid, day(e[0]), e[1], system))
    evs.sort(key=lambda e: (e.date, e.code_system, e.code))
    return PatientRecord(pid, birth_year, gender, tuple((day(a), day(b)) for a, b in spans), tuple(evs))


def simple_vocab(stems=("A01", "B02", "C03"), roles=None):
    """Diagnosis features keyed by 3-character stem, plus the 8 demographics."""
    roles = roles or {}
    entries = [FeatureDef(s, FeatureKind.DIAGNOSIS, (("ICD10", s),), True, roles.get(s, Role.NONE))
               for s in stems]
    return FeatureVocabulary(entries + demographic_features())


@pytest.fixture
def tmp_files(tmp_path):
    def make(patients, events):
        pp = write_csv(tmp_path / "patients.csv", PATIENT_HEADER, patients)
        ep = write_csv(tmp_path / "events.csv", EVENT_HEADER, events)
        return ep, pp
    return make


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
