"""
Ranking candidate indications on a synthetic cohort
===================================================

Walks through the library one step at a time: generate a cohort, filter it,
build the feature vocabulary, embed co-occurrences and rank every candidate
by its median rank against the referential features.

Run with ``python demos/01_rank_synthetic_cohort.py [workdir]``.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

import indfind as ind

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="indfind_demo_"))

# %%
# A small cohort with planted pathway structure.  Pathway 0 holds the three
# referentials and five positives; negatives come from the other pathways.
config = ind.SynthConfig(n_patients=3000, seed=1)
paths = ind.generate_cohort(config, workdir)
print("referentials:", config.referential_names)
print("positives:   ", config.positives)
print("negatives:   ", config.negatives)

# %%
# Load and filter.  The waterfall lists how many patients survive each step.
store = ind.load_events(paths["events"], paths["patients"])
cohort = ind.apply_cohort_filters(store)
for criterion, n in cohort.waterfall:
    print(f"{criterion:>22s} {n:6d}")

# %%
# Vocabulary: the mapping file plus automatic 3-character groups for any
# unmapped diagnosis codes, then the role assignments.
codes = {e.code for p in cohort.patients for e in p.events if e.code_system == "ICD10"}
vocab = ind.build_vocabulary([paths["vocabulary"]], icd10_codes=codes)
from indfind.features import read_roles_file  # noqa: E402
vocab = vocab.with_roles(read_roles_file(paths["roles"]))
print(len(vocab), "features,", len(ind.rankable_features(vocab)), "rankable")

# %%
# Co-occurrence counts over 360-day windows, SPPMI, then a truncated SVD.
encoded = ind.encode_cohort(cohort, vocab)
sppmi_config = ind.SppmiConfig(window_days=360, dim=50, alpha=0.75, eigen_weight=0.75)
cooc = ind.count_cooccurrences(encoded, vocab, sppmi_config.window_days)
print("non-zero pairs:", cooc.counts.nnz, " total pair mass:", cooc.total_pairs)
emb = ind.embed(encoded, vocab, sppmi_config)
print("leading singular values:", np.round(emb.singular_values[:5], 2))

# %%
# Rank candidates.  Each candidate gets one rank per referential; the final
# order is by the median of those ranks.
ranked = ind.rank_indications(emb, vocab.referentials, sorted(ind.rankable_features(vocab)))
pos = ranked.positions()
print("\ntop 10:")
for e in ranked.entries[:10]:
    print(f"{e.final_position:4d}  {vocab[e.feature_id].name:40s} ranks {e.ranks}")

print("\nvalidation positions:")
for name in config.positives + config.negatives:
    tag = "+" if name in config.positives else "-"
    print(f"  {tag} {name:40s} {pos.get(vocab.id(name))}")

validations = ind.ValidationSet(set(vocab.positives), set(vocab.negatives))
print("\nscore:", ind.if_score(ranked, validations))
