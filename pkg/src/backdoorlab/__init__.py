"""Backdoor-defense toolkit: trigger injection, ensemble detection, and
budget-calibrated corrective recovery for labeled image datasets."""

__version__ = "0.1.0"

from .bench import PatchBenchmark, clean_accuracy, make_patch_benchmark
from .classifier import (
    Model,
    NonFiniteGradient,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    features,
    input_gradient,
    linear_margin_radius,
    load_model,
    logits,
    loss,
    predict,
    predict_batch,
    save_model,
    train,
)
from .detection import (
    DetectionRecord,
    DetectorProfile,
    EnsembleConfig,
    OracleDetector,
    ResidualDetector,
    SimulatedDetector,
    Verdict,
    VerdictValue,
    detect_all,
    flagged_indices,
    majority_vote,
    records_from_jsonl,
    records_to_jsonl,
    residual_detector,
    simulated_detector,
)
from .images import (
    Dataset,
    DimensionMismatch,
    Image,
    LabeledSample,
    Provenance,
    class_means,
    gen_synthetic_identities,
    l2_distance,
    linf_distance,
    project_ball_and_range,
    synthetic_prototypes,
)
from .io import (
    load_cifar10_batch,
    load_dataset,
    read_image,
    read_png,
    save_dataset,
    write_heatmap_png,
    write_image,
    write_png,
)
from .metrics import (
    ConfusionCounts,
    MetricSet,
    NoiseStats,
    attack_success_rate,
    confusion,
    metrics,
    noise_stats,
    row_percentages,
)
from .pipeline import (
    ConfigurationError,
    PipelineConfig,
    SanitizationReport,
    guard_inference,
    sanitize,
)
from .poisoning import (
    HiddenTriggerConfig,
    MakeupSpec,
    PatchTrigger,
    PoisonPlan,
    apply_patch,
    blend_makeup,
    checker_pattern,
    hidden_trigger_poison,
    poison_with_hidden_trigger,
    poison_with_makeup,
    poison_with_patch,
    replay_plan,
    save_plan,
    select_poison_indices,
)
from .recovery import (
    BudgetResult,
    RecoveryBatch,
    RecoveryConfig,
    RecoveryResult,
    compute_budget,
    corrective_pgd,
    nearest_rank_percentile,
    probe_trigger_magnitude,
    recover_set,
)
from .remote import RemoteDetector, RemoteDetectorConfig, detect_remote, parse_verdict
