"""Frame-level, segment-level, and overlap metrics with fold aggregation.

Frame metrics (accuracy, macro-F1, PR-AUC) are pooled over all frames of a
fold; segment metrics (edit score, segmental F1 at IoU thresholds) and mIoU
are computed per video and averaged. Every metric is a percentage in
[0, 100]. An optional exclusion list removes classes from scoring: excluded
frames are masked by their ground-truth label for frame metrics and excluded
segments are dropped from both streams for segment metrics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SEGMENTAL_TAUS = (0.10, 0.25, 0.50)

# Table column order used for every rendered report.
METRIC_COLUMNS = (
    ("accuracy", "Accuracy"),
    ("macro_f1", "F1 (macro)"),
    ("edit", "Edit"),
    ("pr_auc", "PR-AUC"),
    ("f1_10", "F1@10"),
    ("f1_25", "F1@25"),
    ("f1_50", "F1@50"),
    ("miou", "mIoU"),
)


@dataclass(frozen=True)
class Segment:
    """Maximal constant-label run with inclusive frame bounds."""

    label: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _labels_array(labels) -> np.ndarray:
    arr = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D label sequence, got shape {arr.shape}")
    return arr


def _check_same_length(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape[0] != gt.shape[0]:
        raise ValueError(f"length mismatch: prediction has {pred.shape[0]} frames, ground truth {gt.shape[0]}")


def to_segments(labels, exclude: Iterable[int] = ()) -> list[Segment]:
    """Run-length encode a label sequence, dropping excluded classes."""
    arr = _labels_array(labels)
    if arr.size == 0:
        raise ValueError("cannot segment an empty label sequence")
    dropped = set(exclude)
    segments: list[Segment] = []
    start = 0
    for i in range(1, arr.size + 1):
        if i == arr.size or arr[i] != arr[start]:
            label = int(arr[start])
            if label not in dropped:
                segments.append(Segment(label, start, i - 1))
            start = i
    return segments


def expand_segments(segments: Sequence[Segment]) -> np.ndarray:
    """Inverse of to_segments for exclusion-free segmentations."""
    if not segments:
        raise ValueError("no segments to expand")
    total = segments[-1].end + 1
    out = np.empty(total, dtype=np.int64)
    for seg in segments:
        out[seg.start : seg.end + 1] = seg.label
    return out


def _frame_mask(gt: np.ndarray, exclude: Iterable[int]) -> np.ndarray:
    dropped = set(exclude)
    if not dropped:
        return np.ones(gt.shape[0], dtype=bool)
    return ~np.isin(gt, list(dropped))


def accuracy(pred, gt, exclude: Iterable[int] = ()) -> float:
    pred, gt = _labels_array(pred), _labels_array(gt)
    _check_same_length(pred, gt)
    keep = _frame_mask(gt, exclude)
    if not keep.any():
        raise ValueError("no frames left after exclusion")
    return 100.0 * int((pred[keep] == gt[keep]).sum()) / int(keep.sum())


def macro_f1(pred, gt, num_classes: int, exclude: Iterable[int] = ()) -> float:
    """Unweighted mean of per-class F1 over classes present in the ground truth."""
    pred, gt = _labels_array(pred), _labels_array(gt)
    _check_same_length(pred, gt)
    keep = _frame_mask(gt, exclude)
    pred, gt = pred[keep], gt[keep]
    dropped = set(exclude)
    scores = []
    for cls in range(num_classes):
        if cls in dropped or not (gt == cls).any():
            continue
        tp = int(((pred == cls) & (gt == cls)).sum())
        fp = int(((pred == cls) & (gt != cls)).sum())
        fn = int(((pred != cls) & (gt == cls)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    if not scores:
        raise ValueError("no ground-truth classes to average over")
    return 100.0 * sum(scores) / len(scores)


def mean_iou(pred, gt, num_classes: int, exclude: Iterable[int] = ()) -> float:
    """Mean Jaccard index over classes present in prediction or ground truth."""
    pred, gt = _labels_array(pred), _labels_array(gt)
    _check_same_length(pred, gt)
    keep = _frame_mask(gt, exclude)
    pred, gt = pred[keep], gt[keep]
    dropped = set(exclude)
    scores = []
    for cls in range(num_classes):
        if cls in dropped:
            continue
        in_pred = pred == cls
        in_gt = gt == cls
        union = int((in_pred | in_gt).sum())
        if union == 0:
            continue
        scores.append(int((in_pred & in_gt).sum()) / union)
    if not scores:
        raise ValueError("no classes to average over")
    return 100.0 * sum(scores) / len(scores)


def _levenshtein(a: list[int], b: list[int]) -> int:
    """Unit-cost edit distance, rolling two rows."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, sym in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if sym == b[j - 1] else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[len(b)]


def _dedup(symbols: list[int]) -> list[int]:
    out: list[int] = []
    for sym in symbols:
        if not out or out[-1] != sym:
            out.append(sym)
    return out


def edit_score(pred, gt, exclude: Iterable[int] = ()) -> float:
    """100 * (1 - normalized Levenshtein) between segment-label strings.

    The strings are canonicalized (adjacent duplicates merged) so splitting a
    segment around an excluded class cannot change the score. Two empty
    strings score 100.
    """
    pred_syms = _dedup([s.label for s in to_segments(pred, exclude)])
    gt_syms = _dedup([s.label for s in to_segments(gt, exclude)])
    longest = max(len(pred_syms), len(gt_syms))
    if longest == 0:
        return 100.0
    score = 100.0 * (1.0 - _levenshtein(pred_syms, gt_syms) / longest)
    return min(max(score, 0.0), 100.0)


def _segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def segmental_f1(pred, gt, tau: float, exclude: Iterable[int] = ()) -> float:
    """Segmental F1 at IoU threshold tau.

    Predicted segments are visited in temporal order; each takes the
    same-label ground-truth segment of maximal IoU and counts as a true
    positive if that IoU reaches tau and the segment is still unmatched.
    Unmatched ground-truth segments are false negatives.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    pred_segs = to_segments(pred, exclude)
    gt_segs = to_segments(gt, exclude)
    if not pred_segs and not gt_segs:
        return 100.0
    matched = [False] * len(gt_segs)
    tp = fp = 0
    for p in pred_segs:
        best_iou, best_idx = 0.0, -1
        for idx, g in enumerate(gt_segs):
            if g.label != p.label:
                continue
            iou = _segment_iou(p, g)
            if iou > best_iou:
                best_iou, best_idx = iou, idx
        if best_idx >= 0 and best_iou >= tau and not matched[best_idx]:
            matched[best_idx] = True
            tp += 1
        else:
            fp += 1
    fn = matched.count(False)
    denom = 2 * tp + fp + fn
    return 100.0 * (2 * tp / denom) if denom else 100.0


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Average precision of one score vector via the exact step rule:
    AP = sum over descending unique scores of (R_k - R_{k-1}) * P_k, with
    tied scores grouped. Returns a fraction in [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    total_pos = int(positives.sum())
    if total_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order]
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    group_ends = np.append(boundaries, sorted_scores.size - 1)
    cum_tp = np.cumsum(sorted_pos)[group_ends]
    precision = cum_tp / (group_ends + 1)
    recall = cum_tp / total_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def pr_auc(probabilities: np.ndarray, gt, num_classes: int, exclude: Iterable[int] = ()) -> float:
    """Macro-averaged average precision from per-frame class probabilities,
    over classes with at least one positive frame."""
    gt = _labels_array(gt)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 2 or probabilities.shape != (num_classes, gt.shape[0]):
        raise ValueError(
            f"probabilities must be [classes={num_classes}, frames={gt.shape[0]}], "
            f"got {probabilities.shape}"
        )
    sums = probabilities.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        worst = int(np.abs(sums - 1.0).argmax())
        raise ValueError(f"probability column {worst} sums to {sums[worst]:.6f}, expected 1")
    keep = _frame_mask(gt, exclude)
    gt = gt[keep]
    probabilities = probabilities[:, keep]
    dropped = set(exclude)
    averages = []
    for cls in range(num_classes):
        if cls in dropped:
            continue
        positives = gt == cls
        if not positives.any():
            continue
        averages.append(average_precision(probabilities[cls], positives))
    if not averages:
        raise ValueError("no class with a positive frame; PR-AUC undefined")
    return 100.0 * sum(averages) / len(averages)


@dataclass(frozen=True)
class VideoMetrics:
    video_id: str
    accuracy: float
    edit: float
    f1_10: float
    f1_25: float
    f1_50: float
    miou: float


@dataclass(frozen=True)
class FoldReport:
    """Pooled frame metrics plus video-averaged segment metrics for one fold."""

    accuracy: float
    macro_f1: float
    edit: float
    pr_auc: float
    f1_10: float
    f1_25: float
    f1_50: float
    miou: float
    num_videos: int
    num_frames: int

    def metric(self, key: str) -> float:
        return getattr(self, key)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FoldReport":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "FoldReport":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class StudyReport:
    """Per-metric mean and population standard deviation over folds."""

    means: dict[str, float]
    stds: dict[str, float]
    num_folds: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        return cls(**json.loads(text))


def video_metrics(
    video_id: str, pred, gt, num_classes: int, exclude: Iterable[int] = ()
) -> VideoMetrics:
    return VideoMetrics(
        video_id=video_id,
        accuracy=accuracy(pred, gt, exclude),
        edit=edit_score(pred, gt, exclude),
        f1_10=segmental_f1(pred, gt, 0.10, exclude),
        f1_25=segmental_f1(pred, gt, 0.25, exclude),
        f1_50=segmental_f1(pred, gt, 0.50, exclude),
        miou=mean_iou(pred, gt, num_classes, exclude),
    )


def aggregate(
    videos: Sequence[tuple[str, np.ndarray, np.ndarray, np.ndarray]],
    num_classes: int,
    exclude: Iterable[int] = (),
) -> FoldReport:
    """Score one fold from (video_id, pred_labels, gt_labels, probabilities) tuples."""
    if not videos:
        raise ValueError("a fold needs at least one video")
    exclude = tuple(exclude)
    per_video = []
    pooled_pred, pooled_gt, pooled_probs = [], [], []
    for video_id, pred, gt, probs in videos:
        pred, gt = _labels_array(pred), _labels_array(gt)
        _check_same_length(pred, gt)
        per_video.append(video_metrics(video_id, pred, gt, num_classes, exclude))
        pooled_pred.append(pred)
        pooled_gt.append(gt)
        pooled_probs.append(np.asarray(probs, dtype=np.float64))
    pred = np.concatenate(pooled_pred)
    gt = np.concatenate(pooled_gt)
    probs = np.concatenate(pooled_probs, axis=1)
    count = len(per_video)
    return FoldReport(
        accuracy=accuracy(pred, gt, exclude),
        macro_f1=macro_f1(pred, gt, num_classes, exclude),
        edit=sum(v.edit for v in per_video) / count,
        pr_auc=pr_auc(probs, gt, num_classes, exclude),
        f1_10=sum(v.f1_10 for v in per_video) / count,
        f1_25=sum(v.f1_25 for v in per_video) / count,
        f1_50=sum(v.f1_50 for v in per_video) / count,
        miou=sum(v.miou for v in per_video) / count,
        num_videos=count,
        num_frames=int(gt.shape[0]),
    )


def summarize(folds: Sequence[FoldReport]) -> StudyReport:
    """Mean and population std per metric over held-out folds."""
    if not folds:
        raise ValueError("no fold reports to summarize")
    means, stds = {}, {}
    for key, _ in METRIC_COLUMNS:
        values = np.array([fold.metric(key) for fold in folds], dtype=np.float64)
        means[key] = float(values.mean())
        stds[key] = float(values.std())  # population std over the folds
    return StudyReport(means=means, stds=stds, num_folds=len(folds))


def render_study_table(study: StudyReport, row_label: str = "model") -> str:
    """Plain-text table mirroring the standard column order."""
    header = ["Model"] + [label for _, label in METRIC_COLUMNS]
    cells = [row_label] + [
        f"{study.means[key]:.1f} ± {study.stds[key]:.1f}" for key, _ in METRIC_COLUMNS
    ]
    widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
        "  ".join(c.ljust(w) for c, w in zip(cells, widths)),
    ]
    return "\n".join(lines) + "\n"


def render_fold_row(report: FoldReport) -> str:
    return "  ".join(
        f"{label}={report.metric(key):.2f}" for key, label in METRIC_COLUMNS
    )
