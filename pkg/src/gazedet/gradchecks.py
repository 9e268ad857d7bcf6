"""Finite-difference verification of every differentiable op and the
end-to-end training loss.

Per-op checks run small random shapes over many seeds; the end-to-end check
runs a 32x32 configuration whose head sees only the appended ground-truth
proposal, so proposal coordinates do not depend on the parameters being
perturbed (proposal boxes are treated as constants by the backward pass,
matching the usual detached-proposal convention).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import detector as dt
from .autodiff import Tensor, grad_check
from .dataset import ClassLabel, EllipseAnnotation, ellipse_to_target

TOLERANCE = 1e-4


def _rand(rng, *shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 2, 6, 6), requires_grad=True)
    p = ad.kaiming_conv(3, 2, 3, 3, rng)

    def f(x, w, b):
        return ad.tensor_sum(ad.conv2d(x, ad.LayerParams(w, b, "conv2d"), stride=2, pad=1))

    return grad_check(f, [x, p.weights, p.bias])


def check_linear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 3, 5), requires_grad=True)
    p = ad.kaiming_linear(4, 5, rng)

    def f(x, w, b):
        return ad.tensor_sum(ad.linear(x, ad.LayerParams(w, b, "linear")))

    return grad_check(f, [x, p.weights, p.bias])


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    # keep inputs away from the kink so central differences are valid
    x = rng.uniform(0.1, 2.0, size=(4, 4)) * np.where(rng.random((4, 4)) < 0.5, -1, 1)
    t = Tensor(x, requires_grad=True)
    return grad_check(lambda t: ad.tensor_sum(ad.relu(t)), [t])


def check_sigmoid(seed: int) -> float:
    rng = np.random.default_rng(seed)
    t = Tensor(_rand(rng, 3, 3, lo=-4, hi=4), requires_grad=True)
    return grad_check(lambda t: ad.tensor_sum(ad.sigmoid(t)), [t])


def check_maxpool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    t = Tensor(_rand(rng, 1, 2, 6, 6), requires_grad=True)
    return grad_check(lambda t: ad.tensor_sum(ad.maxpool2d(t, 2, 2)), [t])


def check_combine(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a = Tensor(_rand(rng, 3, 3), requires_grad=True)
    b = Tensor(_rand(rng, 3, 3), requires_grad=True)
    e_sum = grad_check(lambda a, b: ad.tensor_sum(ad.elementwise_combine(a, b, "sum")), [a, b])
    e_mul = grad_check(lambda a, b: ad.tensor_sum(ad.elementwise_combine(a, b, "mul")), [a, b])
    return max(e_sum, e_mul)


def check_softmax_ce(seed: int) -> float:
    rng = np.random.default_rng(seed)
    z = Tensor(_rand(rng, 4, 3), requires_grad=True)
    labels = rng.integers(0, 3, size=4)
    return grad_check(lambda z: ad.softmax_cross_entropy(z, labels), [z])


def check_bce(seed: int) -> float:
    rng = np.random.default_rng(seed)
    z = Tensor(_rand(rng, 3, 4), requires_grad=True)
    t = rng.integers(0, 2, size=(3, 4)).astype(np.float64)
    return grad_check(lambda z: ad.bce_with_logits(z, t), [z])


def check_smooth_l1(seed: int) -> float:
    rng = np.random.default_rng(seed)
    # keep residuals away from |x| = 1 where smooth-L1 second derivative jumps
    t = np.zeros((3, 4))
    x = rng.uniform(0.1, 0.8, size=(3, 4)) * np.where(rng.random((3, 4)) < 0.5, -1, 1)
    x[0] += np.sign(x[0]) * 1.5  # exercise the linear branch too
    z = Tensor(x, requires_grad=True)
    return grad_check(lambda z: ad.smooth_l1(z, t), [z])


def check_roi_align(seed: int) -> float:
    rng = np.random.default_rng(seed)
    feat = Tensor(_rand(rng, 1, 2, 4, 4), requires_grad=True)
    rois = np.array([[1.0, 2.0, 9.5, 11.0], [0.0, 0.0, 16.0, 16.0]])
    return grad_check(
        lambda f: ad.tensor_sum(dt.roi_align(f, rois, stride=4, out_size=3)), [feat]
    )


OP_CHECKS = [
    ("conv2d", check_conv2d),
    ("linear", check_linear),
    ("relu", check_relu),
    ("sigmoid", check_sigmoid),
    ("maxpool2d", check_maxpool),
    ("elementwise_combine", check_combine),
    ("softmax_cross_entropy", check_softmax_ce),
    ("bce_with_logits", check_bce),
    ("smooth_l1", check_smooth_l1),
    ("roi_align", check_roi_align),
]


def end_to_end_config(seed: int) -> dt.ModelConfig:
    """Tiny 32x32 config: gt-only head proposals, few channels."""
    return dt.ModelConfig(
        img_size=32,
        use_fixations=True,
        fusion_mode="sum",
        fusion_point="feature",
        anchor_scales=(10.0, 20.0),
        anchor_ratios=(1.0,),
        post_nms_top=0,
        roi_size=3,
        n_classes=2,
        channels=(3, 3, 4, 4),
        rpn_channels=4,
        fc_dim=8,
        mask_channels=4,
        seed=seed,
    )


def check_end_to_end(seed: int) -> float:
    """FD check of the total loss w.r.t. every parameter tensor."""
    cfg = end_to_end_config(seed)
    model = dt.DetectorModel(cfg)
    rng = np.random.default_rng([seed, 3])
    image = rng.uniform(0.0, 1.0, size=(32, 32))
    fmap = rng.uniform(0.0, 1.0, size=(32, 32))
    ann = EllipseAnnotation(cx=14.0, cy=17.0, rx=6.0, ry=5.0,
                            label=ClassLabel.ATELECTASIS)
    targets = [ellipse_to_target(ann, 32, 32)]
    gt = np.stack([t.xyxy for t in targets])
    loss_rng_seed = [seed, 11]

    def loss_fn(*_params):
        out = model.forward(image, fmap, mode="train", gt_boxes=gt)
        loss = dt.compute_loss(out, targets, cfg,
                               np.random.default_rng(loss_rng_seed))
        return loss.tensor

    tensors = [t for p in model.param_list() for t in p.tensors()]
    return grad_check(loss_fn, tensors)


def run_gradcheck_suite(n_seeds: int = 20, base_seed: int = 0,
                        include_end_to_end: bool = True,
                        n_e2e_seeds: int = 3, log=None) -> list[tuple[str, float]]:
    """Run all checks; returns (name, max relative error) per op."""
    results = []
    for name, fn in OP_CHECKS:
        worst = max(fn(base_seed * 1000 + s) for s in range(n_seeds))
        results.append((name, worst))
        if log:
            log(f"gradcheck {name}: max rel err {worst:.3e}")
    if include_end_to_end:
        worst = max(check_end_to_end(base_seed * 1000 + s) for s in range(n_e2e_seeds))
        results.append(("end_to_end_loss", worst))
        if log:
            log(f"gradcheck end_to_end_loss: max rel err {worst:.3e}")
    return results
