"""Box-overlap metrics and per-class AP/AR reporting.

IoBB divides the intersection area by the *predicted* box area, so a
prediction fully inside an oversized ground-truth box scores 1.0. IoU is
the usual symmetric intersection-over-union. Matching is greedy in
descending score with inclusive (>= threshold) comparison, one match per
ground-truth box.

AP is the all-point area under the precision-recall curve (precision
envelope); AR is recall over the top-scoring ``max_dets`` detections at the
single threshold. Classes without ground truth are excluded from macro
averages and flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import ClassLabel, REPORT_CLASS_TITLES
from .gaze import _atomic_write_text

AP_HEADER_TEMPLATE = "AP@[{kind}={thresh:.2f}]"
AR_HEADER_TEMPLATE = "AR@[{kind}={thresh:.2f}]"


def _box_area(box) -> float:
    return max(0.0, box[2] - box[0]) * max(0.0, box[3] - box[1])


def _intersection(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0.0, w) * max(0.0, h)


def iobb(pred, gt) -> float:
    """Intersection over the detected (predicted) box area."""
    pa = _box_area(pred)
    if pa <= 0:
        raise ValueError(f"zero-area predicted box {tuple(pred)}")
    return _intersection(pred, gt) / pa


def iou(a, b) -> float:
    inter = _intersection(a, b)
    union = _box_area(a) + _box_area(b) - inter
    if union <= 0:
        raise ValueError("iou undefined for two zero-area boxes")
    return inter / union


def overlap(pred, gt, kind: str) -> float:
    if kind == "iobb":
        return iobb(pred, gt)
    if kind == "iou":
        return iou(pred, gt)
    raise ValueError(f"unknown overlap kind {kind!r}")


@dataclass
class MatchResult:
    det_is_tp: np.ndarray  # bool per detection, in internal rank order
    det_matched_gt: np.ndarray  # gt index or -1, in rank order
    gt_matched: np.ndarray  # bool per gt
    order: np.ndarray  # rank order -> original detection index


def _rank_order(dets) -> np.ndarray:
    """Deterministic ranking: score desc, then box lexicographic."""
    keys = [(-d.score, tuple(d.box), i) for i, d in enumerate(dets)]
    return np.asarray([k[2] for k in sorted(keys)], dtype=np.intp)


def match_detections(dets, gts, thresh: float, kind: str = "iobb") -> MatchResult:
    """Greedy matching; each detection takes the best still-unmatched gt."""
    order = _rank_order(dets)
    gt_matched = np.zeros(len(gts), dtype=bool)
    is_tp = np.zeros(len(dets), dtype=bool)
    matched_gt = np.full(len(dets), -1, dtype=np.int64)
    for rank, di in enumerate(order):
        best_ov, best_g = 0.0, -1
        for g, gt in enumerate(gts):
            if gt_matched[g]:
                continue
            ov = overlap(dets[di].box, gt.xyxy, kind)
            if ov >= thresh and ov > best_ov:
                best_ov, best_g = ov, g
        if best_g >= 0:
            gt_matched[best_g] = True
            is_tp[rank] = True
            matched_gt[rank] = best_g
    return MatchResult(is_tp, matched_gt, gt_matched, order)


def average_precision(dets, gts, thresh: float, kind: str = "iobb") -> float | None:
    """All-point area under the precision-recall curve; None if no gt."""
    if len(gts) == 0:
        return None
    if len(dets) == 0:
        return 0.0
    m = match_detections(dets, gts, thresh, kind)
    tp = np.cumsum(m.det_is_tp.astype(np.float64))
    fp = np.cumsum((~m.det_is_tp).astype(np.float64))
    recall = tp / len(gts)
    precision = tp / (tp + fp)
    # precision envelope, then sum area over recall increments
    r = np.concatenate([[0.0], recall, [recall[-1]]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    return float(np.sum((r[1:] - r[:-1]) * p[1:]))


def average_recall(dets, gts, thresh: float, kind: str = "iobb",
                   max_dets: int = 100) -> float | None:
    """Fraction of gts matched by the top ``max_dets`` detections; None if no gt."""
    if len(gts) == 0:
        return None
    order = _rank_order(dets)
    top = [dets[i] for i in order[:max_dets]]
    m = match_detections(top, gts, thresh, kind)
    return float(m.gt_matched.sum()) / len(gts)


def precision_recall(dets, gts, thresh: float, kind: str = "iobb") -> tuple[float, float]:
    """Raw precision/recall over the full detection set at one threshold."""
    if len(dets) == 0:
        return 0.0, 0.0
    m = match_detections(dets, gts, thresh, kind)
    tp = float(m.det_is_tp.sum())
    recall = tp / len(gts) if len(gts) else 0.0
    return tp / len(dets), recall


# ---------------------------------------------------------------------------
# report


@dataclass
class ClassMetrics:
    label: ClassLabel
    ap: float | None
    ar: float | None
    precision: float = 0.0
    recall: float = 0.0
    n_gt: int = 0
    n_det: int = 0


@dataclass
class MetricsReport:
    rows: list[ClassMetrics]
    average_ap: float | None
    average_ar: float | None
    metadata: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def ap_header(self) -> str:
        return AP_HEADER_TEMPLATE.format(
            kind=self.metadata.get("metric_kind", "iobb").replace("iobb", "IoBB").replace("iou", "IoU"),
            thresh=self.metadata.get("threshold", 0.5),
        )

    def ar_header(self) -> str:
        return AR_HEADER_TEMPLATE.format(
            kind=self.metadata.get("metric_kind", "iobb").replace("iobb", "IoBB").replace("iou", "IoU"),
            thresh=self.metadata.get("threshold", 0.5),
        )

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "warnings": list(self.warnings),
            "classes": [
                {
                    "label": REPORT_CLASS_TITLES[r.label],
                    "ap": r.ap,
                    "ar": r.ar,
                    "precision": r.precision,
                    "recall": r.recall,
                    "n_gt": r.n_gt,
                    "n_det": r.n_det,
                }
                for r in self.rows
            ],
            "average": {"ap": self.average_ap, "ar": self.average_ar},
        }

    def to_markdown(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6f}"

        lines = [
            f"| Abnormality | {self.ap_header()} | {self.ar_header()} |",
            "|---|---|---|",
        ]
        for r in self.rows:
            lines.append(f"| {REPORT_CLASS_TITLES[r.label]} | {fmt(r.ap)} | {fmt(r.ar)} |")
        lines.append(f"| Average | {fmt(self.average_ap)} | {fmt(self.average_ar)} |")
        for w in self.warnings:
            lines.append(f"")
            lines.append(f"> warning: {w}")
        meta = ", ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        lines.append("")
        lines.append(f"_{meta}_")
        return "\n".join(lines) + "\n"


def _mean_defined(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def build_report(rows: list[ClassMetrics], metadata: dict | None = None,
                 declared_average_ap: float | None = None,
                 declared_average_ar: float | None = None) -> MetricsReport:
    """Assemble the fixed-order per-class table plus macro averages.

    Averages are arithmetic means over classes with n_gt > 0. If a caller
    declares externally computed averages that disagree with those means,
    the computed means win and a warning is recorded.
    """
    by_label = {r.label: r for r in rows}
    ordered = [by_label[c] for c in ClassLabel if c in by_label]
    avg_ap = _mean_defined([r.ap for r in ordered])
    avg_ar = _mean_defined([r.ar for r in ordered])
    report = MetricsReport(
        rows=ordered,
        average_ap=avg_ap,
        average_ar=avg_ar,
        metadata=dict(metadata or {}),
    )
    report.metadata.setdefault("average_rule", "arithmetic mean over classes with n_gt > 0")
    report.metadata.setdefault("ap_rule", "all-point PR area, precision envelope")
    report.metadata.setdefault("threshold_comparison", "inclusive (>=)")
    for r in ordered:
        if r.n_gt == 0:
            report.warnings.append(
                f"class {REPORT_CLASS_TITLES[r.label]} has no ground truth; excluded from averages"
            )
    for name, declared, computed in (
        ("AP", declared_average_ap, avg_ap),
        ("AR", declared_average_ar, avg_ar),
    ):
        if declared is not None and computed is not None and abs(declared - computed) > 5e-7:
            report.warnings.append(
                f"declared average {name} {declared:.6f} does not equal the arithmetic "
                f"mean {computed:.6f} of the per-class values; reporting the computed mean"
            )
    return report


def evaluate_detections(dets_by_class: dict[ClassLabel, list],
                        gts_by_class: dict[ClassLabel, list],
                        thresh: float = 0.5, kind: str = "iobb",
                        max_dets: int = 100,
                        metadata: dict | None = None) -> MetricsReport:
    """Per-class AP/AR report from class-partitioned detections and targets."""
    rows = []
    for c in ClassLabel:
        dets = dets_by_class.get(c, [])
        gts = gts_by_class.get(c, [])
        prec, rec = precision_recall(dets, gts, thresh, kind)
        rows.append(ClassMetrics(
            label=c,
            ap=average_precision(dets, gts, thresh, kind),
            ar=average_recall(dets, gts, thresh, kind, max_dets),
            precision=prec,
            recall=rec,
            n_gt=len(gts),
            n_det=len(dets),
        ))
    meta = {"metric_kind": kind, "threshold": thresh, "max_dets": max_dets}
    meta.update(metadata or {})
    return build_report(rows, meta)


def save_report(path_json: str, path_md: str, report: MetricsReport) -> None:
    _atomic_write_text(path_json, json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    _atomic_write_text(path_md, report.to_markdown())
