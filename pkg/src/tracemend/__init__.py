"""tracemend: detect and correct anomalous traces in business-process event logs.

The pipeline is inject -> train -> classify -> correct -> evaluate: clean
event logs are corrupted with labeled synthetic anomalies, a Transformer
autoencoder learns to classify traces and reconstruct the originals, and
evaluation scores both the case-level detection and the edit-distance
quality of the corrections.
"""

from .anomaly import (
    ANOMALOUS,
    NORMAL,
    AnomalyKind,
    AnomalyRecord,
    InjectionConfig,
    LabeledDataset,
    LabeledTrace,
    TokenVocab,
    apply_anomaly,
    build_dataset,
    load_dataset,
    max_padded_length,
    relabel,
    save_dataset,
    select_injections,
)
from .estimator import TraceCorrector
from .eventlog import (
    ActivityVocab,
    BehavioralProfile,
    CsvMapping,
    Event,
    EventLog,
    LogStats,
    Relation,
    Trace,
    VariantSet,
    compute_behavioral_profile,
    compute_stats,
    extract_variants,
    parse_csv,
    parse_xes,
    train_test_split,
    write_csv,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    classify,
    correct_trace,
    dl_distance,
    dl_similarity,
    evaluate_model,
    f_score,
    localize_events,
)
from .model import (
    ForwardOutput,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .synthesis import generate_synthetic_log, model_from_json
from .training import EpochMetrics, TrainConfig, evaluate_split, joint_loss, train

__version__ = "0.1.0"
