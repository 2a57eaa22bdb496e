"""
Embedding features versus raw counts for prediction
===================================================

A patient's look-back window can be summarised two ways: a vector of code
counts, or the sum of the embedding rows of those codes (which is the count
vector multiplied by the embedding matrix).  Both feed the same L2
logistic regression.  On a target with a planted precursor the two should
reach about the same holdout AUC, and both should fall to 0.5 when the
labels are shuffled.

Run with ``python demos/03_predictive_parity.py``.
"""

import tempfile

import indfind as ind
from indfind.features import read_roles_file

config = ind.SynthConfig(n_patients=4000, seed=3)
paths = ind.generate_cohort(config, tempfile.mkdtemp(prefix="indfind_pred_"))
cohort = ind.apply_cohort_filters(ind.load_events(paths["events"], paths["patients"]))
codes = {e.code for p in cohort.patients for e in p.events if e.code_system == "ICD10"}
vocab = ind.build_vocabulary([paths["vocabulary"]], icd10_codes=codes).with_roles(
    read_roles_file(paths["roles"]))
encoded = ind.encode_cohort(cohort, vocab)
emb = ind.embed(encoded, vocab, ind.SppmiConfig(dim=50))

target = vocab.id(config.target_name)
tasks = [ind.PredictionTaskSpec(target, cohort_size=4000, holdout_size=1000, seed=s) for s in range(3)]
tasks += [ind.PredictionTaskSpec(target, cohort_size=4000, holdout_size=1000, seed=s,
                                 permute_labels=True) for s in range(3)]
report = ind.predictive_eval(encoded, emb, vocab, tasks)

print(f"{'labels':>9s} {'seed':>4s} {'prevalence':>10s} {'counts':>7s} {'embedding':>9s}")
for spec, t in zip(tasks, report.tasks):
    kind = "shuffled" if spec.permute_labels else "real"
    print(f"{kind:>9s} {spec.seed:4d} {t.prevalence:10.3f} {t.auc_counts:7.3f} {t.auc_embedding:9.3f}")
