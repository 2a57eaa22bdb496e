"""Indication finding from patient co-occurrence embeddings."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, IndfindError, NumericError
from .cohort import (ClinicalEvent, Cohort, CohortCriteria, EventStore, PatientRecord,
                     apply_cohort_filters, load_events, subsample)
from .features import (FeatureDef, FeatureKind, FeatureVocabulary, Role, build_vocabulary,
                       bucket_age, icd10_chapter, map_code, rankable_features)
from .embedding import (CooccurrenceMatrix, EmbeddingMatrix, SppmiConfig, compute_sppmi,
                        count_cooccurrences, embed, encode_cohort, factorize, truncated_svd)
from .ranking import (RankedList, StabilityReport, apply_stability_filter, cosine_similarity,
                      rank_indications, stability_pass)
from .evaluation import (PredictionTaskSpec, ValidationSet, ablation_cohort_size, auc,
                         build_prediction_features, evaluate_ranking, if_score,
                         predictive_eval, project_2d, recall_at_k, train_logistic)
from .search import expand_grid, hyperparameter_search
from .synth import SynthConfig, generate_cohort, planted_truth

__all__ = [name for name in dir() if not name.startswith("_")]
