"""Miniature two-branch detector: backbones, fusion, RPN, ROI-align, heads.

The model is a desk-scale region-proposal detector over grayscale grids.
An image branch and an optional fixation-map branch run through small
conv/pool backbones (stride 8, 32 feature channels by default); the two
are combined element-wise either on the raw inputs or on the feature maps.
A 3x3 RPN predicts per-anchor objectness and box deltas, proposals are
pooled with bilinear ROI-align, and small heads emit class logits, box
deltas, and per-class mask logits at ROI resolution.

Total training loss = classification + bbox + mask, where classification is
RPN binary cross-entropy plus multiclass head cross-entropy, bbox is
smooth-L1 over positive anchors/proposals, and mask is binary cross-entropy
on the ground-truth class channel only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import boxes as bx
from .autodiff import LayerParams, Tensor
from .dataset import ClassLabel, CLASS_NAMES, NAME_TO_CLASS, TargetBox
from .gaze import FixationMap, _atomic_write_text

CHECKPOINT_FORMAT = "gazedet-checkpoint-v1"


@dataclass
class ModelConfig:
    img_size: int = 64
    use_fixations: bool = False
    fusion_mode: str = "sum"  # "sum" | "mul"
    fusion_point: str = "feature"  # "input" | "feature"
    anchor_scales: tuple = (8.0, 16.0, 28.0)
    anchor_ratios: tuple = (1.0,)
    pre_nms_top: int = 200
    post_nms_top: int = 50  # 0 = head sees only appended gt boxes (train mode)
    rpn_nms_thresh: float = 0.7
    roi_size: int = 7
    rpn_fg_thresh: float = 0.7
    rpn_bg_thresh: float = 0.3
    head_fg_thresh: float = 0.5
    head_bg_thresh: float = 0.5
    n_classes: int = 5
    seed: int = 0
    channels: tuple = (8, 16, 32, 32)
    rpn_channels: int = 32
    fc_dim: int = 64
    mask_channels: int = 16
    rpn_batch: int = 32
    proposals_per_step: int = 32
    pos_fraction: float = 0.25
    score_thresh: float = 0.05
    infer_nms_thresh: float = 0.5
    max_detections: int = 100

    def __post_init__(self):
        if not 0.0 <= self.rpn_bg_thresh < self.rpn_fg_thresh <= 1.0:
            raise ValueError("need 0 <= rpn_bg_thresh < rpn_fg_thresh <= 1")
        if not 0.0 <= self.head_bg_thresh <= self.head_fg_thresh <= 1.0:
            raise ValueError("need 0 <= head_bg_thresh <= head_fg_thresh <= 1")
        if not self.anchor_scales or not self.anchor_ratios:
            raise ValueError("anchor scales and ratios must be non-empty")
        if self.fusion_mode not in ("sum", "mul"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.fusion_point not in ("input", "feature"):
            raise ValueError(f"unknown fusion_point {self.fusion_point!r}")
        if self.img_size % 8 != 0:
            raise ValueError("img_size must be a multiple of the stride-8 backbone")

    @property
    def feat_stride(self) -> int:
        return 8

    @property
    def feat_size(self) -> int:
        return self.img_size // self.feat_stride

    @property
    def n_anchors_per_cell(self) -> int:
        return len(self.anchor_scales) * len(self.anchor_ratios)


@dataclass
class Detection:
    box: np.ndarray  # (4,) x_min, y_min, x_max, y_max
    label: ClassLabel
    score: float
    mask: np.ndarray  # (roi, roi) floats in [0, 1]


@dataclass
class LossBreakdown:
    classification: float
    bbox: float
    mask: float
    total: float
    tensor: Tensor = field(repr=False, default=None)


@dataclass
class DetectorOutput:
    feat: Tensor
    anchors: np.ndarray
    rpn_obj: Tensor  # (n_anchors,)
    rpn_deltas: Tensor  # (n_anchors, 4)
    proposals: np.ndarray  # (R, 4)
    n_rpn_proposals: int  # proposals before any appended gt boxes
    cls_logits: Tensor | None  # (R, n_classes + 1)
    box_deltas: Tensor | None  # (R, 4)
    mask_logits: Tensor | None  # (R, n_classes, roi, roi)
    detections: list[Detection] | None = None


def roi_align(feat: Tensor, rois: np.ndarray, stride: int, out_size: int,
              sampling: int = 2) -> Tensor:
    """Bilinear ROI pooling: each cell averages a sampling x sampling grid.

    Boxes are image-coordinate (x0, y0, x1, y1); feature pixel centers sit
    at integer-plus-half coordinates in feature units.
    """
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    n, c, fh, fw = feat.data.shape
    if n != 1:
        raise ad.ShapeError(f"roi_align expects batch 1, got {feat.data.shape}")
    r = len(rois)
    if r == 0:
        return Tensor(np.zeros((0, c, out_size, out_size)))
    if np.any(rois[:, 2] <= rois[:, 0]) or np.any(rois[:, 3] <= rois[:, 1]):
        raise ValueError("roi_align given a degenerate (zero-area) box")

    b = rois / stride
    os_ = out_size * sampling
    # per-axis sample coordinates, (r, out*sampling)
    frac = (np.arange(os_) + 0.5) / sampling / out_size
    xs = b[:, 0:1] + frac[None, :] * (b[:, 2:3] - b[:, 0:1])
    ys = b[:, 1:2] + frac[None, :] * (b[:, 3:4] - b[:, 1:2])

    def axis_interp(coord, extent):
        u = np.clip(coord - 0.5, 0.0, extent - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), extent - 1)
        i1 = np.minimum(i0 + 1, extent - 1)
        w1 = u - i0
        return i0, i1, 1.0 - w1, w1

    y0, y1, wy0, wy1 = axis_interp(ys, fh)
    x0, x1, wx0, wx1 = axis_interp(xs, fw)

    # dense sampling matrix: (r*os*os, fh*fw); rebuilt per call, reused by backward
    m = np.zeros((r * os_ * os_, fh * fw))
    rows = np.arange(r * os_ * os_).reshape(r, os_, os_)
    for yi, wy in ((y0, wy0), (y1, wy1)):
        for xi, wx in ((x0, wx0), (x1, wx1)):
            lin = yi[:, :, None] * fw + xi[:, None, :]
            np.add.at(m, (rows, lin), wy[:, :, None] * wx[:, None, :])

    feat2d = feat.data[0].reshape(c, fh * fw)
    samp = (feat2d @ m.T).reshape(c, r, out_size, sampling, out_size, sampling)
    out_data = samp.mean(axis=(3, 5)).transpose(1, 0, 2, 3)

    def backward(g):
        if not feat.tracked:
            return
        gexp = np.repeat(np.repeat(g, sampling, axis=2), sampling, axis=3)
        gexp = gexp.transpose(1, 0, 2, 3).reshape(c, r * os_ * os_) / (sampling * sampling)
        feat.accumulate_grad((gexp @ m).reshape(1, c, fh, fw))

    return ad._node(out_data, (feat,), backward, "roi_align output")


# ---------------------------------------------------------------------------
# model


_SHARED_LAYER_ORDER = [
    "bb_img_0", "bb_img_1", "bb_img_2", "bb_img_3",
    "rpn_conv", "rpn_obj", "rpn_delta",
    "fc1", "cls", "box", "mask_conv", "mask_out",
]
_FIX_LAYER_ORDER = ["bb_fix_0", "bb_fix_1", "bb_fix_2", "bb_fix_3"]


class DetectorModel:
    """Owns all layer parameters; single-threaded during forward/backward."""

    def __init__(self, config: ModelConfig):
        self.config = config
        c1, c2, c3, c4 = config.channels
        a = config.n_anchors_per_cell
        k = config.n_classes
        rng = np.random.default_rng(config.seed)
        p: dict[str, LayerParams] = {}
        p["bb_img_0"] = ad.kaiming_conv(c1, 1, 3, 3, rng)
        p["bb_img_1"] = ad.kaiming_conv(c2, c1, 3, 3, rng)
        p["bb_img_2"] = ad.kaiming_conv(c3, c2, 3, 3, rng)
        p["bb_img_3"] = ad.kaiming_conv(c4, c3, 3, 3, rng)
        p["rpn_conv"] = ad.kaiming_conv(config.rpn_channels, c4, 3, 3, rng)
        p["rpn_obj"] = ad.kaiming_conv(a, config.rpn_channels, 1, 1, rng)
        p["rpn_delta"] = ad.kaiming_conv(4 * a, config.rpn_channels, 1, 1, rng)
        p["fc1"] = ad.kaiming_linear(config.fc_dim, c4 * config.roi_size**2, rng)
        p["cls"] = ad.kaiming_linear(k + 1, config.fc_dim, rng)
        p["box"] = ad.kaiming_linear(4, config.fc_dim, rng)
        p["mask_conv"] = ad.kaiming_conv(config.mask_channels, c4, 3, 3, rng)
        p["mask_out"] = ad.kaiming_conv(k, config.mask_channels, 1, 1, rng)
        if config.use_fixations and config.fusion_point == "feature":
            # separate stream so shared layers stay identical to an
            # image-only model built from the same seed
            frng = np.random.default_rng([config.seed, 7])
            p["bb_fix_0"] = ad.kaiming_conv(c1, 1, 3, 3, frng)
            p["bb_fix_1"] = ad.kaiming_conv(c2, c1, 3, 3, frng)
            p["bb_fix_2"] = ad.kaiming_conv(c3, c2, 3, 3, frng)
            p["bb_fix_3"] = ad.kaiming_conv(c4, c3, 3, 3, frng)
        self.params = p
        self._anchors = bx.generate_anchors(
            config.feat_size, config.feat_size, config.feat_stride,
            list(config.anchor_scales), list(config.anchor_ratios), config.img_size,
        )

    @property
    def anchors(self) -> np.ndarray:
        return self._anchors

    def param_list(self) -> list[LayerParams]:
        order = _SHARED_LAYER_ORDER + [n for n in _FIX_LAYER_ORDER if n in self.params]
        return [self.params[n] for n in order]

    def zero_grad(self) -> None:
        for p in self.param_list():
            p.zero_grad()

    def _backbone(self, x: Tensor, prefix: str) -> Tensor:
        h = ad.relu(ad.conv2d(x, self.params[prefix + "_0"], stride=1, pad=1))
        h = ad.maxpool2d(h, 2, 2)
        h = ad.relu(ad.conv2d(h, self.params[prefix + "_1"], stride=1, pad=1))
        h = ad.maxpool2d(h, 2, 2)
        h = ad.relu(ad.conv2d(h, self.params[prefix + "_2"], stride=1, pad=1))
        h = ad.maxpool2d(h, 2, 2)
        return ad.relu(ad.conv2d(h, self.params[prefix + "_3"], stride=1, pad=1))

    def _as_grid_tensor(self, grid) -> Tensor:
        if isinstance(grid, FixationMap):
            grid = grid.values
        arr = np.asarray(grid, dtype=np.float64)
        if arr.shape != (self.config.img_size, self.config.img_size):
            raise ad.ShapeError(
                f"input grid shape {arr.shape} != configured "
                f"({self.config.img_size}, {self.config.img_size})"
            )
        return Tensor(arr[None, None])

    def backbone_forward(self, grid) -> Tensor:
        """Image-branch features: stride-8 spatial reduction."""
        return self._backbone(self._as_grid_tensor(grid), "bb_img")

    def fuse(self, image, fmap) -> Tensor:
        """Fused trunk features per the configured mode and point."""
        cfg = self.config
        x_img = self._as_grid_tensor(image)
        if not cfg.use_fixations:
            return self._backbone(x_img, "bb_img")
        if fmap is None:
            raise ValueError("fixation map required by this configuration")
        x_fix = self._as_grid_tensor(fmap)
        if cfg.fusion_point == "input":
            fused = ad.elementwise_combine(x_img, x_fix, cfg.fusion_mode)
            return self._backbone(fused, "bb_img")
        f_img = self._backbone(x_img, "bb_img")
        f_fix = self._backbone(x_fix, "bb_fix")
        return ad.elementwise_combine(f_img, f_fix, cfg.fusion_mode)

    def forward(self, image, fmap=None, mode: str = "infer",
                gt_boxes: np.ndarray | None = None) -> DetectorOutput:
        """Run the full pipeline.

        In train mode ``gt_boxes`` (if given) are appended to the RPN
        proposals so the heads always see positives; in infer mode the
        Detection list is attached.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        cfg = self.config
        feat = self.fuse(image, fmap)
        fh, fw = feat.data.shape[2], feat.data.shape[3]
        a = cfg.n_anchors_per_cell

        h = ad.relu(ad.conv2d(feat, self.params["rpn_conv"], stride=1, pad=1))
        obj = ad.conv2d(h, self.params["rpn_obj"])  # (1, A, fh, fw)
        dlt = ad.conv2d(h, self.params["rpn_delta"])  # (1, 4A, fh, fw)
        # flatten to anchor order: per cell (row-major), then per (scale, ratio)
        rpn_obj = ad.reshape(ad.transpose(ad.reshape(obj, (a, fh, fw)), (1, 2, 0)), (-1,))
        rpn_deltas = ad.reshape(
            ad.transpose(ad.reshape(dlt, (a, 4, fh, fw)), (2, 3, 0, 1)), (-1, 4)
        )

        proposals = self._select_proposals(rpn_obj.data, rpn_deltas.data)
        n_rpn = len(proposals)
        if mode == "train" and gt_boxes is not None and len(gt_boxes):
            proposals = np.concatenate([proposals, np.asarray(gt_boxes, dtype=np.float64)])

        if len(proposals) == 0:
            return DetectorOutput(feat, self._anchors, rpn_obj, rpn_deltas,
                                  proposals, 0, None, None, None,
                                  [] if mode == "infer" else None)

        pooled = roi_align(feat, proposals, cfg.feat_stride, cfg.roi_size)
        flat = ad.flatten(pooled)
        h1 = ad.relu(ad.linear(flat, self.params["fc1"]))
        cls_logits = ad.linear(h1, self.params["cls"])
        box_deltas = ad.linear(h1, self.params["box"])
        m = ad.relu(ad.conv2d(pooled, self.params["mask_conv"], stride=1, pad=1))
        mask_logits = ad.conv2d(m, self.params["mask_out"])

        out = DetectorOutput(feat, self._anchors, rpn_obj, rpn_deltas, proposals,
                             n_rpn, cls_logits, box_deltas, mask_logits)
        if mode == "infer":
            out.detections = self._postprocess(out)
        return out

    def _select_proposals(self, obj_logits: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.post_nms_top == 0:
            return np.zeros((0, 4))
        decoded = bx.decode_boxes(self._anchors, deltas, cfg.img_size)
        valid = (decoded[:, 2] - decoded[:, 0] >= 1.0) & (decoded[:, 3] - decoded[:, 1] >= 1.0)
        decoded = decoded[valid]
        scores = obj_logits[valid]
        if len(decoded) == 0:
            return np.zeros((0, 4))
        order = np.argsort(-scores, kind="stable")[: cfg.pre_nms_top]
        decoded, scores = decoded[order], scores[order]
        keep = bx.nms(decoded, scores, cfg.rpn_nms_thresh)[: cfg.post_nms_top]
        return decoded[keep]

    def _postprocess(self, out: DetectorOutput) -> list[Detection]:
        cfg = self.config
        z = out.cls_logits.data
        z = z - z.max(axis=1, keepdims=True)
        ez = np.exp(z)
        probs = ez / ez.sum(axis=1, keepdims=True)
        boxes = bx.decode_boxes(out.proposals, out.box_deltas.data, cfg.img_size)
        valid = (boxes[:, 2] - boxes[:, 0] > 0) & (boxes[:, 3] - boxes[:, 1] > 0)
        dets: list[Detection] = []
        for c in range(1, cfg.n_classes + 1):
            sc = probs[:, c]
            sel = np.flatnonzero((sc >= cfg.score_thresh) & valid)
            if len(sel) == 0:
                continue
            keep = bx.nms(boxes[sel], sc[sel], cfg.infer_nms_thresh)
            for i in sel[keep]:
                mask = 1.0 / (1.0 + np.exp(-out.mask_logits.data[i, c - 1]))
                dets.append(Detection(boxes[i].copy(), ClassLabel(c - 1), float(sc[i]), mask))
        dets.sort(key=lambda d: (-d.score, tuple(d.box)))
        return dets[: cfg.max_detections]


# ---------------------------------------------------------------------------
# target assignment and loss


@dataclass
class AssignResult:
    labels: np.ndarray  # 1 positive, 0 background, -1 ignored
    matched: np.ndarray  # gt index per box (-1 when unmatched)


def assign_targets(candidates: np.ndarray, targets: list[TargetBox],
                   fg_thresh: float, bg_thresh: float,
                   force_best: bool = True) -> AssignResult:
    """IoU-threshold assignment with the best anchor per target forced positive."""
    n = len(candidates)
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if not targets or n == 0:
        return AssignResult(labels, matched)
    gt = np.stack([t.xyxy for t in targets])
    ious = bx.iou_matrix(candidates, gt)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best_gt]
    labels[:] = -1
    labels[best_iou < bg_thresh] = 0
    labels[best_iou >= fg_thresh] = 1
    matched[labels == 1] = best_gt[labels == 1]
    if force_best:
        for g in range(len(targets)):
            i = int(ious[:, g].argmax())
            labels[i] = 1
            matched[i] = g
    return AssignResult(labels, matched)


def _sample_balanced(labels: np.ndarray, batch: int, pos_fraction: float,
                     rng: np.random.Generator) -> np.ndarray:
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), max(1, int(round(batch * pos_fraction)))) if len(pos) else 0
    n_neg = min(len(neg), batch - n_pos)
    take_pos = rng.choice(pos, n_pos, replace=False) if n_pos else np.empty(0, np.intp)
    take_neg = rng.choice(neg, n_neg, replace=False) if n_neg else np.empty(0, np.intp)
    return np.sort(np.concatenate([take_pos, take_neg]).astype(np.intp))


def _mask_target(gt_mask: np.ndarray, roi: np.ndarray, out_size: int) -> np.ndarray:
    """Resample the full-resolution binary mask inside a proposal to ROI size."""
    h, w = gt_mask.shape
    x0, y0, x1, y1 = roi
    xs = x0 + (np.arange(out_size) + 0.5) * (x1 - x0) / out_size
    ys = y0 + (np.arange(out_size) + 0.5) * (y1 - y0) / out_size
    xi = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    yi = np.clip(np.floor(ys).astype(np.intp), 0, h - 1)
    return gt_mask[np.ix_(yi, xi)].astype(np.float64)


def compute_loss(out: DetectorOutput, targets: list[TargetBox], config: ModelConfig,
                 rng: np.random.Generator) -> LossBreakdown:
    """Total loss = classification + bbox + mask (exact float sum)."""
    zero = Tensor(0.0)
    gt = np.stack([t.xyxy for t in targets]) if targets else np.zeros((0, 4))

    # RPN objectness + regression on anchors
    rpn_assign = assign_targets(out.anchors, targets, config.rpn_fg_thresh,
                                config.rpn_bg_thresh, force_best=True)
    samp = _sample_balanced(rpn_assign.labels, config.rpn_batch, 0.5, rng)
    if len(samp):
        rpn_cls = ad.bce_with_logits(
            ad.gather_rows(out.rpn_obj, samp), rpn_assign.labels[samp].astype(np.float64)
        )
    else:
        rpn_cls = zero
    pos_a = np.flatnonzero(rpn_assign.labels == 1)
    if len(pos_a):
        reg_t = bx.encode_boxes(out.anchors[pos_a], gt[rpn_assign.matched[pos_a]])
        rpn_box = ad.smooth_l1(ad.gather_rows(out.rpn_deltas, pos_a), reg_t)
    else:
        rpn_box = zero

    # head terms over sampled proposals
    head_ce = head_box = mask_loss = zero
    if out.cls_logits is not None and len(out.proposals):
        head_assign = assign_targets(out.proposals, targets, config.head_fg_thresh,
                                     config.head_bg_thresh, force_best=False)
        hsamp = _sample_balanced(head_assign.labels, config.proposals_per_step,
                                 config.pos_fraction, rng)
        if len(hsamp):
            cls_targets = np.zeros(len(hsamp), dtype=np.int64)
            for k, i in enumerate(hsamp):
                if head_assign.labels[i] == 1:
                    cls_targets[k] = int(targets[head_assign.matched[i]].label) + 1
            head_ce = ad.softmax_cross_entropy(
                ad.gather_rows(out.cls_logits, hsamp), cls_targets
            )
            pos_p = hsamp[head_assign.labels[hsamp] == 1]
            if len(pos_p):
                reg_t = bx.encode_boxes(out.proposals[pos_p], gt[head_assign.matched[pos_p]])
                head_box = ad.smooth_l1(ad.gather_rows(out.box_deltas, pos_p), reg_t)
                mt = np.stack([
                    _mask_target(targets[head_assign.matched[i]].mask,
                                 out.proposals[i], config.roi_size)
                    for i in pos_p
                ])
                gt_cls = np.array([int(targets[head_assign.matched[i]].label) for i in pos_p])
                sel = ad.take_channel_per_row(ad.gather_rows(out.mask_logits, pos_p), gt_cls)
                mask_loss = ad.bce_with_logits(sel, mt)

    cls_t = rpn_cls + head_ce
    box_t = rpn_box + head_box
    c, b, mval = cls_t.item(), box_t.item(), mask_loss.item()
    return LossBreakdown(
        classification=c, bbox=b, mask=mval, total=c + b + mval,
        tensor=cls_t + box_t + mask_loss,
    )


# ---------------------------------------------------------------------------
# checkpoints and prediction files


def save_checkpoint(path: str, model: DetectorModel) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "seed": model.config.seed,
        "params": {
            name: {
                "kind": p.kind,
                "weights": p.weights.data.tolist(),
                "bias": p.bias.data.tolist(),
            }
            for name, p in sorted(model.params.items())
        },
    }
    _atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str) -> DetectorModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg_dict = dict(payload["config"])
    for key in ("anchor_scales", "anchor_ratios", "channels"):
        cfg_dict[key] = tuple(cfg_dict[key])
    model = DetectorModel(ModelConfig(**cfg_dict))
    for name, entry in payload["params"].items():
        if name not in model.params:
            raise ValueError(f"{path}: unexpected layer {name!r}")
        p = model.params[name]
        w = np.asarray(entry["weights"], dtype=np.float64)
        b = np.asarray(entry["bias"], dtype=np.float64)
        if w.shape != p.weights.data.shape or b.shape != p.bias.data.shape:
            raise ValueError(f"{path}: shape mismatch for layer {name!r}")
        p.weights.data = w
        p.bias.data = b
    return model


def predictions_to_json(dets_by_reading: dict[str, list[Detection]]) -> list[dict]:
    rows = []
    for reading_id in sorted(dets_by_reading):
        for d in dets_by_reading[reading_id]:
            rows.append({
                "reading_id": reading_id,
                "box": [float(v) for v in d.box],
                "label": CLASS_NAMES[d.label],
                "score": d.score,
            })
    return rows


def predictions_from_json(rows: list[dict], roi_size: int = 7) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for row in rows:
        det = Detection(
            box=np.asarray(row["box"], dtype=np.float64),
            label=NAME_TO_CLASS[row["label"]],
            score=float(row["score"]),
            mask=np.zeros((roi_size, roi_size)),
        )
        out.setdefault(row["reading_id"], []).append(det)
    return out


def save_predictions(path: str, dets_by_reading: dict[str, list[Detection]]) -> None:
    _atomic_write_text(path, json.dumps(predictions_to_json(dets_by_reading)) + "\n")
