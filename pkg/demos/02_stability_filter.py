"""
Filtering unstable candidates
=============================

A candidate whose similarity to the referentials depends on a handful of
patients can rank highly on the full cohort and still be an artefact.  The
stability pass re-embeds five half-size subsamples, takes the lower bound
``mean - 1.96 sd`` of each candidate-referential similarity and re-ranks by
it.  Candidates in the top 200 that fall by more than 200 places against
any referential are dropped.

The synthetic generator plants one such feature: its link to the
referentials comes from very few patients.

Run with ``python demos/02_stability_filter.py``.  Takes a few minutes.
"""

import tempfile

import numpy as np

import indfind as ind
from indfind.features import read_roles_file

config = ind.SynthConfig(n_patients=10_000, seed=0)
paths = ind.generate_cohort(config, tempfile.mkdtemp(prefix="indfind_stab_"))
cohort = ind.apply_cohort_filters(ind.load_events(paths["events"], paths["patients"]))
codes = {e.code for p in cohort.patients for e in p.events if e.code_system == "ICD10"}
vocab = ind.build_vocabulary([paths["vocabulary"]], icd10_codes=codes).with_roles(
    read_roles_file(paths["roles"]))
encoded = ind.encode_cohort(cohort, vocab)
cands = sorted(ind.rankable_features(vocab))
sppmi_config = ind.SppmiConfig()

ranked = ind.rank_indications(ind.embed(encoded, vocab, sppmi_config), vocab.referentials, cands)
report = ind.stability_pass(encoded, vocab, sppmi_config, vocab.referentials, ranked.feature_ids,
                            n_runs=5, fraction=0.5, seed=0, ranked_full=ranked)
final = ind.apply_stability_filter(ranked, report, top_n=200, delta_threshold=200)

# %%
# The volatile feature: per-run similarities to the first referential, the
# lower bound and the rank drop.
vid = vocab.id(config.volatile_name)
i = report.candidate_ids.index(vid)
print("volatile feature:", config.volatile_name)
print("  full-cohort position:", ranked.positions()[vid])
print("  per-run similarity:  ", np.round(report.runs[:, i, 0], 3))
print("  lower bound:         ", np.round(report.lower_bound[i], 3))
print("  rank drop (delta):   ", report.delta[i])
print("  removed:", vid in {f for f, _ in final.removed})

# %%
# Compare with a planted positive, which draws on hundreds of patients.
pid = vocab.id(config.positives[0])
j = report.candidate_ids.index(pid)
print("\npositive:", config.positives[0])
print("  per-run similarity:  ", np.round(report.runs[:, j, 0], 3))
print("  rank drop (delta):   ", report.delta[j])

print(f"\n{len(final.removed)} of the top 200 removed; {len(final)} remain")
