"""Box geometry: anchor grids, delta encoding/decoding, IoU, NMS.

Boxes are (x_min, y_min, x_max, y_max) arrays in image coordinates.
Deltas follow the usual (tx, ty, tw, th) parameterization:
cx' = cx + tx*w, cy' = cy + ty*h, w' = w*exp(tw), h' = h*exp(th),
with tw/th clamped to ln(16) before exponentiation.
"""

from __future__ import annotations

import numpy as np

LOG_MAX_SCALE = float(np.log(16.0))


def generate_anchors(
    feat_h: int,
    feat_w: int,
    stride: int,
    scales: list[float],
    ratios: list[float],
    img_size: int,
) -> np.ndarray:
    """One anchor per (cell, scale, ratio), centered on cell centers, clipped.

    Scale s at ratio 1 gives a square s-by-s anchor; ratio r stretches
    height by sqrt(r) and shrinks width by sqrt(r) (area preserved).
    """
    cy = (np.arange(feat_h) + 0.5) * stride
    cx = (np.arange(feat_w) + 0.5) * stride
    anchors = []
    for y in cy:
        for x in cx:
            for s in scales:
                for r in ratios:
                    h = s * np.sqrt(r)
                    w = s / np.sqrt(r)
                    anchors.append([x - w / 2, y - h / 2, x + w / 2, y + h / 2])
    out = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    return clip_boxes(out, img_size)


def clip_boxes(boxes: np.ndarray, img_size: int) -> np.ndarray:
    out = boxes.copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, float(img_size))
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, float(img_size))
    return out


def _whc(boxes: np.ndarray):
    w = np.maximum(boxes[:, 2] - boxes[:, 0], 1e-6)
    h = np.maximum(boxes[:, 3] - boxes[:, 1], 1e-6)
    cx = boxes[:, 0] + 0.5 * w
    cy = boxes[:, 1] + 0.5 * h
    return w, h, cx, cy


def encode_boxes(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Deltas that map each anchor onto the paired ground-truth box."""
    aw, ah, acx, acy = _whc(anchors)
    gw, gh, gcx, gcy = _whc(gts)
    return np.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1
    )


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray, img_size: int | None = None) -> np.ndarray:
    aw, ah, acx, acy = _whc(anchors)
    tx, ty = deltas[:, 0], deltas[:, 1]
    tw = np.clip(deltas[:, 2], -LOG_MAX_SCALE, LOG_MAX_SCALE)
    th = np.clip(deltas[:, 3], -LOG_MAX_SCALE, LOG_MAX_SCALE)
    cx = acx + tx * aw
    cy = acy + ty * ah
    w = aw * np.exp(tw)
    h = ah * np.exp(th)
    out = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    if img_size is not None:
        out = clip_boxes(out, img_size)
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    x0 = np.maximum(a[:, None, 0], b[None, :, 0])
    y0 = np.maximum(a[:, None, 1], b[None, :, 1])
    x1 = np.minimum(a[:, None, 2], b[None, :, 2])
    y1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Greedy descending-score suppression; ties broken by lower index."""
    if len(boxes) != len(scores):
        raise ValueError(f"nms length mismatch: {len(boxes)} boxes vs {len(scores)} scores")
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must be in (0, 1), got {iou_thresh}")
    if len(boxes) == 0:
        return np.empty(0, dtype=np.intp)
    # stable sort on -score keeps the lower index first among ties
    order = np.argsort(-scores, kind="stable")
    ious = iou_matrix(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_thresh
    return np.asarray(keep, dtype=np.intp)
