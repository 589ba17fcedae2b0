"""Static-feature bias discovery for temporal sequence classifiers.

The package covers the full desk-scale loop: synthetic biased datasets
(`synth`), a small trainable temporal classifier (`model`), spherical
k-means clustering (`cluster`), bias scoring and reporting (`discovery`,
`calibration`), ranking metrics and quality gates (`metrics`, `gates`),
prompt-based mitigation (`mitigation`) and the sweep harness (`harness`).
"""

from .calibration import fit_temperature, nll
from .cluster import ClusterModel, select_k, silhouette, spherical_kmeans
from .discovery import (BiasCandidate, BiasReport, compute_ecs, compute_sbs,
                        compute_records, discover, rank_images)
from .gates import GateResult, bias_gaps, gate_model, gate_task
from .metrics import (baseline_confidence, baseline_random, precision_at_k,
                      r_precision)
from .mitigation import (ClusterPrompt, evaluate_mitigation, fit_prompts,
                         learn_cluster_prompts, route_predict,
                         route_predict_batch)
from .model import Featurizer, TemporalModel, TrainConfig, train
from .synth import (Dataset, DatasetConfig, FeatureKind, FeatureSpec,
                    MotionLabel, SequenceSample, cramers_v, generate_dataset,
                    render_frame, sample_trajectory, solve_prevalence)

__version__ = "0.1.0"
