"""Warm-up, control-set selection, and the student-teacher co-training loop.

Each epoch the teacher re-edits every training clip from its original
initial boundary, the student trains one epoch on the edited clips, and
the student is scored by caption-to-clip R@1 on a frozen control set of
high-confidence pairs. A strict improvement copies the student into the
teacher; M consecutive non-improving epochs stop the loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import CaptionAnnotation, ClipAssignment, ClipRef, FeatureStore
from .editor import EditConfig, EditResult, edit_all
from .encoder import (
    EncoderParams,
    TrainConfig,
    embed_caption,
    embed_clip,
    make_optimizer,
    similarity,
    train_epoch,
)
from .evalrep import evaluate_retrieval
from .timeline import InitStrategy, initial_clip, jitter

TEACHER_MODES = ("update", "frozen", "random", "self")


@dataclass(frozen=True)
class CoTrainConfig:
    gamma: float = 0.0
    patience: int = 5
    max_epochs: int = 50
    teacher_mode: str = "update"
    train: TrainConfig = field(default_factory=TrainConfig)
    edit: EditConfig = field(default_factory=EditConfig)

    def __post_init__(self) -> None:
        if not -1.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [-1,1], got {self.gamma}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.teacher_mode not in TEACHER_MODES:
            raise ValueError(
                f"teacher_mode must be one of {TEACHER_MODES}, got {self.teacher_mode!r}"
            )


@dataclass(frozen=True)
class ControlSet:
    caption_ids: tuple[str, ...]
    frozen_clips: ClipAssignment

    def __post_init__(self) -> None:
        if not self.caption_ids:
            raise ValueError("control set empty; lower gamma")


@dataclass
class CoTrainResult:
    best_student: EncoderParams
    final_student: EncoderParams
    teacher: EncoderParams
    clips: ClipAssignment
    log: list[dict]
    best_epoch: int
    best_monitor: float
    control: ControlSet
    last_edits: list[EditResult]


def build_initial_assignment(
    store: FeatureStore,
    annotations: list[CaptionAnnotation],
    strategy: InitStrategy,
    split: str = "train",
) -> ClipAssignment:
    """Initial clip per caption from neighboring timestamps within its video."""
    by_video: dict[str, list[CaptionAnnotation]] = {}
    for ann in annotations:
        if ann.split == split:
            by_video.setdefault(ann.video_id, []).append(ann)
    out: ClipAssignment = {}
    for video_id, anns in by_video.items():
        anns.sort(key=lambda a: a.timestamp_s)
        span = store.video_span(video_id)
        for i, ann in enumerate(anns):
            prev_t = anns[i - 1].timestamp_s if i > 0 else None
            next_t = anns[i + 1].timestamp_s if i + 1 < len(anns) else None
            try:
                clip = initial_clip(prev_t, ann.timestamp_s, next_t, span, strategy)
            except ValueError as exc:
                raise ValueError(f"caption {ann.caption_id}: {exc}") from exc
            out[ann.caption_id] = ClipRef(video_id, clip)
    return out


def apply_jitter(
    clips: ClipAssignment,
    fraction: float,
    max_jitter_s: float,
    store: FeatureStore,
    rng: np.random.Generator,
) -> ClipAssignment:
    """Jitter both boundaries of a random `fraction` of the clips."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"jitter fraction must be in [0,1], got {fraction}")
    ids = sorted(clips)
    n_pick = int(round(fraction * len(ids)))
    if n_pick == 0 or max_jitter_s == 0:
        return dict(clips)
    picked = set(rng.choice(len(ids), size=n_pick, replace=False).tolist())
    out: ClipAssignment = {}
    for i, cid in enumerate(ids):
        ref = clips[cid]
        if i in picked:
            span = store.video_span(ref.video_id)
            out[cid] = ClipRef(ref.video_id, jitter(ref.interval, max_jitter_s, span, rng))
        else:
            out[cid] = ref
    return out


def warmup(
    store: FeatureStore,
    annotations: list[CaptionAnnotation],
    strategy: InitStrategy,
    cfg: TrainConfig,
    assignment: ClipAssignment | None = None,
) -> tuple[EncoderParams, ClipAssignment]:
    """Train a fresh encoder on initial clips; returns (params, assignment).

    A prebuilt `assignment` (e.g. a jittered one) overrides the
    timestamp-derived initial clips.
    """
    if assignment is None:
        assignment = build_initial_assignment(store, annotations, strategy)
    if not assignment:
        raise ValueError("no train-split captions to warm up on")
    rng = np.random.default_rng(cfg.seed)
    params = EncoderParams.init_random(store.dim, rng=rng)
    optimizer = make_optimizer(cfg)
    for _ in range(cfg.epochs):
        train_epoch(params, store, assignment, cfg, rng, optimizer)
    return params, assignment


def diagonal_similarity(
    params: EncoderParams, store: FeatureStore, ref: ClipRef, caption_id: str
) -> float:
    from .corpus import clip_features

    return similarity(
        embed_clip(params, clip_features(store, ref)),
        embed_caption(params, store.caption_features[caption_id]),
    )


def select_control_set(
    params: EncoderParams, store: FeatureStore, clips: ClipAssignment, gamma: float
) -> ControlSet:
    """Captions whose clip-caption similarity strictly exceeds gamma, with
    their current boundaries frozen."""
    chosen = [
        cid for cid in sorted(clips)
        if diagonal_similarity(params, store, clips[cid], cid) > gamma
    ]
    return ControlSet(
        caption_ids=tuple(chosen),
        frozen_clips={cid: clips[cid] for cid in chosen},
    )


def monitor_metric(params: EncoderParams, store: FeatureStore, control: ControlSet) -> float:
    """R@1 of control captions against the control set's frozen clips."""
    return evaluate_retrieval(
        params, store, list(control.caption_ids), control.frozen_clips
    ).r_at[1]


def cotrain(
    warm_params: EncoderParams,
    assignment: ClipAssignment,
    store: FeatureStore,
    cfg: CoTrainConfig,
    workers: int | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> CoTrainResult:
    """Run the editing/training loop; see module docstring for the shape.

    `on_epoch` receives each log record as it is produced, so partial logs
    survive a mid-run failure.
    """
    control = select_control_set(warm_params, store, assignment, cfg.gamma)
    student = warm_params.copy()
    if cfg.teacher_mode == "random":
        t_rng = np.random.default_rng(cfg.train.seed + 1)
        teacher = EncoderParams.init_random(
            warm_params.d_in, warm_params.d_out, tau=warm_params.tau,
            rng=t_rng, dtype=warm_params.W_v.dtype,
        )
    else:
        teacher = warm_params.copy()

    best_monitor = monitor_metric(warm_params, store, control)
    best_student = warm_params.copy()
    best_epoch = 0
    epochs_since_improve = 0
    rng = np.random.default_rng(cfg.train.seed)
    optimizer = make_optimizer(cfg.train)
    log: list[dict] = []
    clips = dict(assignment)
    last_edits: list[EditResult] = []

    for epoch in range(1, cfg.max_epochs + 1):
        editor_params = student if cfg.teacher_mode == "self" else teacher
        clips, edits = edit_all(editor_params, store, assignment, cfg.edit, workers=workers)
        last_edits = edits
        _, train_loss = train_epoch(student, store, clips, cfg.train, rng, optimizer)
        monitor = monitor_metric(student, store, control)
        improved = monitor > best_monitor
        teacher_updated = False
        if improved:
            best_monitor = monitor
            best_student = student.copy()
            best_epoch = epoch
            epochs_since_improve = 0
            if cfg.teacher_mode == "update":
                teacher = student.copy()
                teacher_updated = True
        else:
            epochs_since_improve += 1
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "monitor": monitor,
            "n_applied_edits": sum(1 for e in edits if e.applied),
            "teacher_updated": teacher_updated,
        }
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if epochs_since_improve >= cfg.patience:
            break

    return CoTrainResult(
        best_student=best_student,
        final_student=student,
        teacher=teacher,
        clips=clips,
        log=log,
        best_epoch=best_epoch,
        best_monitor=best_monitor,
        control=control,
        last_edits=last_edits,
    )


def write_cotrain_log(path: str | Path, log: list[dict]) -> None:
    lines = [json.dumps(rec) for rec in log]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
