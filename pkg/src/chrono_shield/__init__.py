"""Shadow-based attacks on sign classifiers and a history-voting defense."""

from .attack import (
    AttackConfig,
    AttackResult,
    DegenerateMask,
    InvalidConfig,
    PsoConfig,
    ShadowSpec,
    apply_shadow,
    pso_minimize,
    run_attack,
)
from .cnn import (
    Classifier,
    ModelConfig,
    ModelWeights,
    Prediction,
    TrainConfig,
    evaluate,
    forward,
    grad_check,
    init_weights,
    load_weights,
    predict_batch,
    save_weights,
    train,
)
from .codecs import MalformedFile, UnsupportedVariant, decode_image, encode_image, load_image, save_image
from .dataset import LabeledImageSet, load_dataset, save_dataset
from .defense import DefenseWarning, Verdict, Vote, VotePolicy, defend, format_verdict, majority_vote
from .harness import (
    ExperimentReport,
    MissingArchive,
    emit_report,
    run_attack_sweep,
    run_defense_sweep,
    run_full_sweep,
    train_adversarial_baseline,
)
from .history import (
    HistoricalRecord,
    HistoryQuery,
    MatchPolicy,
    NetworkUnreachable,
    ProtocolError,
    RemoteHistoryClient,
    haversine_m,
    prefetch_route,
    query_archive,
    query_remote,
)
from .masks import BinaryMask, MaskParams, NoContourFound, find_contours, generate_mask
from .raster import RasterImage, gaussian_blur, resize_bilinear, to_grayscale
from .synth import CLASS_NAMES, SynthConfig, make_history_archive, render_sign, synth_dataset

__all__ = [
    "AttackConfig",
    "AttackResult",
    "BinaryMask",
    "CLASS_NAMES",
    "Classifier",
    "DefenseWarning",
    "DegenerateMask",
    "ExperimentReport",
    "HistoricalRecord",
    "HistoryQuery",
    "InvalidConfig",
    "LabeledImageSet",
    "MalformedFile",
    "MaskParams",
    "MatchPolicy",
    "MissingArchive",
    "ModelConfig",
    "ModelWeights",
    "NetworkUnreachable",
    "NoContourFound",
    "Prediction",
    "ProtocolError",
    "PsoConfig",
    "RasterImage",
    "RemoteHistoryClient",
    "ShadowSpec",
    "SynthConfig",
    "TrainConfig",
    "UnsupportedVariant",
    "Verdict",
    "Vote",
    "VotePolicy",
    "apply_shadow",
    "decode_image",
    "defend",
    "emit_report",
    "encode_image",
    "evaluate",
    "find_contours",
    "format_verdict",
    "forward",
    "gaussian_blur",
    "generate_mask",
    "grad_check",
    "haversine_m",
    "init_weights",
    "load_dataset",
    "load_image",
    "load_weights",
    "majority_vote",
    "make_history_archive",
    "predict_batch",
    "prefetch_route",
    "pso_minimize",
    "query_archive",
    "query_remote",
    "render_sign",
    "resize_bilinear",
    "run_attack",
    "run_attack_sweep",
    "run_defense_sweep",
    "run_full_sweep",
    "save_dataset",
    "save_image",
    "save_weights",
    "synth_dataset",
    "to_grayscale",
    "train",
    "train_adversarial_baseline",
]
