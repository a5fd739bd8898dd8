"""Timestamp-supervised clip boundary editing for caption-to-clip retrieval."""

from .corpus import (
    CaptionAnnotation,
    ClipRef,
    FeatureStore,
    SynthConfig,
    VideoRecord,
    load_annotations,
    load_features,
    segment_features,
    synth_corpus,
    write_annotations,
    write_features,
)
from .cotrain import (
    ControlSet,
    CoTrainConfig,
    CoTrainResult,
    apply_jitter,
    build_initial_assignment,
    cotrain,
    monitor_metric,
    select_control_set,
    warmup,
)
from .editor import (
    EditConfig,
    EditResult,
    consensus_select,
    edit_all,
    edit_clip,
    enumerate_candidates,
    top_k_segments,
)
from .encoder import (
    EncoderParams,
    NumericError,
    TrainConfig,
    embed_caption,
    embed_clip,
    info_nce,
    load_checkpoint,
    save_checkpoint,
    similarity,
    train_epoch,
)
from .evalrep import (
    IoUHistogram,
    RetrievalMetrics,
    evaluate_retrieval,
    iou_histogram,
    median_rank,
    rank_of,
    recall_at_k,
)
from .timeline import (
    DegenerateClipError,
    InitStrategy,
    Interval,
    SegmentGrid,
    initial_clip,
    iou,
    jitter,
    segment_grid,
)

__version__ = "0.1.0"

__all__ = [
    "CaptionAnnotation", "ClipRef", "FeatureStore", "SynthConfig", "VideoRecord",
    "load_annotations", "load_features", "segment_features", "synth_corpus",
    "write_annotations", "write_features",
    "ControlSet", "CoTrainConfig", "CoTrainResult", "apply_jitter",
    "build_initial_assignment", "cotrain", "monitor_metric", "select_control_set",
    "warmup",
    "EditConfig", "EditResult", "consensus_select", "edit_all", "edit_clip",
    "enumerate_candidates", "top_k_segments",
    "EncoderParams", "NumericError", "TrainConfig", "embed_caption", "embed_clip",
    "info_nce", "load_checkpoint", "save_checkpoint", "similarity", "train_epoch",
    "IoUHistogram", "RetrievalMetrics", "evaluate_retrieval", "iou_histogram",
    "median_rank", "rank_of", "recall_at_k",
    "DegenerateClipError", "InitStrategy", "Interval", "SegmentGrid",
    "initial_clip", "iou", "jitter", "segment_grid",
    "__version__",
]
