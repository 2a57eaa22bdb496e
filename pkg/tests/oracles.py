"""Slow, direct reference implementations used as test oracles.

They share no code with the package beyond plain data types.
"""

import datetime as dt
import itertools
from collections import Counter
from decimal import Decimal, getcontext

getcontext().prec = 50

EXCLUDED = {"XVIII", "XIX", "XXI"}


def chapter_by_letter(code):
    """Coarse ICD-10 chapter test, enough for the letters used in fixtures."""
    c = code[:3]
    if "R00" <= c <= "R99":
        return "XVIII"
    if "S00" <= c <= "T99":
        return "XIX"
    if c.startswith("Z"):
        return "XXI"
    return "other"


def age_label(age):
    for lo, hi in ((18, 27), (28, 37), (38, 47), (48, 57), (58, 67)):
        if lo <= age <= hi:
            return f"age_{lo}-{hi}"
    return "age_67+"


def windows(patient, code_to_name, w):
    """List of feature-name lists, one per non-empty window, demographics added.

    ``code_to_name`` maps a raw code to a feature name or None.
    """
    mapped = [(e.date, code_to_name(e.code)) for e in patient.events]
    mapped = [(d, n) for d, n in mapped if n is not None]
    if not mapped:
        return []
    first = min(d for d, _ in mapped)
    out = {}
    for d, n in mapped:
        out.setdefault((d - first).days // w, []).append(n)
    result = []
    for k in sorted(out):
        start = first + dt.timedelta(days=k * w)
        result.append(out[k] + [f"gender_{patient.gender}", age_label(start.year - patient.birth_year)])
    return result


def cooccurrence(patients, code_to_name, w, presence=True):
    """Ordered-pair counts {(a, b): n} over all windows."""
    pairs = Counter()
    for p in patients:
        for win in windows(p, code_to_name, w):
            bag = Counter(set(win)) if presence else Counter(win)
            for a, b in itertools.permutations(bag, 2):
                pairs[(a, b)] += bag[a] * bag[b]
    return pairs


def sppmi(pairs, alpha, shift=0):
    """Direct formula with 50-digit decimals: {(a, b): value} for positive entries."""
    marg = Counter()
    for (a, _), n in pairs.items():
        marg[a] += n
    alpha = Decimal(str(alpha))
    ctx = {c: Decimal(m) ** alpha for c, m in marg.items()}
    z = sum(ctx.values(), Decimal(0))
    log_shift = Decimal(shift).ln() if shift > 1 else Decimal(0)
    out = {}
    for (a, b), n in pairs.items():
        if n <= 0:
            continue
        val = (Decimal(n) * z / (Decimal(marg[a]) * ctx[b])).ln() - log_shift
        if val > 0:
            out[(a, b)] = float(val)
    return out


def passes_filters(p, as_of, min_age=18, min_enroll=365, min_gap=365, max_per_day=50,
                   exclusions=(("O00", "O99"), ("P00", "P96")), inclusion=()):
    """Per-criterion verdicts written directly from the criteria text."""
    verdicts = {}
    verdicts["age"] = as_of.year - p.birth_year >= min_age
    verdicts["enrollment"] = any((b - a).days + 1 >= min_enroll for a, b in p.enrollment_spans)
    dates = sorted({e.date for e in p.events})
    verdicts["two_visits"] = len(dates) >= 2 and (dates[-1] - dates[0]).days >= min_gap
    verdicts["pregnancy_exclusion"] = not any(
        e.code_system == "ICD10" and any(lo <= e.code[:3] <= hi for lo, hi in exclusions)
        for e in p.events)
    per_day = {}
    for e in p.events:
        if e.code_system == "ICD10":
            per_day.setdefault(e.date, set()).add(e.code)
    verdicts["diagnoses_per_day"] = all(len(s) <= max_per_day for s in per_day.values())
    verdicts["clinical_inclusion"] = (not inclusion) or any(
        e.code_system == "ICD10" and e.code.startswith(pref) for e in p.events for pref in inclusion)
    return verdicts


def pairwise_auc(scores, labels):
    cases = [s for s, y in zip(scores, labels) if y]
    ctrls = [s for s, y in zip(scores, labels) if not y]
    total = Decimal(0)
    for a in cases:
        for b in ctrls:
            total += 1 if a > b else Decimal("0.5") if a == b else 0
    return float(total / (len(cases) * len(ctrls)))
