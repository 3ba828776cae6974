"""Training losses as plain numpy functions with analytic gradients.

Every loss returns a :class:`LossValue` whose ``gradients`` hold one flat
buffer per differentiable input, sized like that input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, log_softmax, softmax

from .errors import EmptyMatchSet, ShapeMismatch, TooManyInstances


@dataclass(frozen=True)
class LossWeights:
    segmentation: float = 0.01
    densepose: float = 1.0
    mask: float = 1.0

    def __post_init__(self):
        if min(self.segmentation, self.densepose, self.mask) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossValue:
    value: float
    gradients: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch("shape mismatch: %s" % sorted(shapes))


def confidence_regression_loss(pred, truth, conf, valid=None, alpha=0.2):
    """Mean over valid pixels of ``C * |X - Xgt| - alpha * log C`` (metric space)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    conf = np.asarray(conf, dtype=float)
    _same_shape(pred, truth)
    if conf.shape != pred.shape[:-1]:
        raise ShapeMismatch("confidence grid must match pointmap grid")
    if valid is None:
        valid = np.ones(conf.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != conf.shape:
        raise ShapeMismatch("valid mask must match confidence grid")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if conf.size and conf[valid].min(initial=np.inf) < 1:
        raise ValueError("confidence must be >= 1")

    nv = int(valid.sum())
    g_pred = np.zeros_like(pred)
    g_conf = np.zeros_like(conf)
    if nv == 0:
        return LossValue(0.0, {"pred": g_pred.ravel(), "conf": g_conf.ravel()})
    diff = pred - truth
    dist = np.linalg.norm(diff, axis=-1)
    c = conf[valid]
    value = float(np.sum(c * dist[valid] - alpha * np.log(c)) / nv)
    unit = np.zeros_like(diff)
    nz = valid & (dist > 0)
    unit[nz] = diff[nz] / dist[nz][:, None]
    g_pred[valid] = conf[valid][:, None] * unit[valid] / nv
    g_conf[valid] = (dist[valid] - alpha / c) / nv
    return LossValue(value, {"pred": g_pred.ravel(), "conf": g_conf.ravel()})


def infonce_matching_loss(desc0, desc1, matches, temperature=0.07):
    """Symmetric InfoNCE over a set of true matches; negatives are the other matches.

    ``matches`` is a sequence of ``((r0, c0), (r1, c1))`` pixel pairs.
    """
    desc0 = np.asarray(desc0, dtype=float)
    desc1 = np.asarray(desc1, dtype=float)
    if desc0.shape[-1] != desc1.shape[-1]:
        raise ShapeMismatch("descriptor dimensions differ")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    m = np.asarray(matches, dtype=np.int64).reshape(-1, 2, 2)
    n = len(m)
    if n == 0:
        raise EmptyMatchSet("no matches given")
    A = desc0[m[:, 0, 0], m[:, 0, 1]]
    B = desc1[m[:, 1, 0], m[:, 1, 1]]
    S = A @ B.T / temperature
    lr = log_softmax(S, axis=1)
    lc = log_softmax(S, axis=0)
    diag = np.arange(n)
    value = float(-0.5 * (lr[diag, diag].mean() + lc[diag, diag].mean()))

    eye = np.eye(n)
    G = 0.5 * ((softmax(S, axis=1) - eye) + (softmax(S, axis=0) - eye)) / n
    gA = G @ B / temperature
    gB = G.T @ A / temperature
    g0 = np.zeros_like(desc0)
    g1 = np.zeros_like(desc1)
    np.add.at(g0, (m[:, 0, 0], m[:, 0, 1]), gA)
    np.add.at(g1, (m[:, 1, 0], m[:, 1, 1]), gB)
    return LossValue(value, {"desc0": g0.ravel(), "desc1": g1.ravel()})


def bce_with_logits(logits, target):
    """Element-wise binary cross-entropy, stable for large |logits|."""
    x = np.asarray(logits, dtype=float)
    y = np.asarray(target, dtype=float)
    return np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))


def dice_loss(prob, target, eps=0.0):
    """``1 - 2|A∩B| / (|A| + |B|)`` on soft masks; two empty masks give 0."""
    p = np.asarray(prob, dtype=float).ravel()
    g = np.asarray(target, dtype=float).ravel()
    den = p.sum() + g.sum() + eps
    if den == 0:
        return 0.0
    return float(1.0 - (2.0 * (p * g).sum() + eps) / den)


def _dice_grad(p, g):
    den = p.sum() + g.sum()
    if den == 0:
        return np.zeros_like(p)
    num = 2.0 * (p * g).sum()
    return -(2.0 * g * den - num) / den ** 2


@dataclass(frozen=True)
class SegmentationConfig:
    class_weight: float = 2.0
    bce_weight: float = 5.0
    dice_weight: float = 5.0
    background_weight: float = 0.1


def hungarian_match(cost):
    """Minimum-cost assignment of rows (queries) to columns (instances)."""
    rows, cols = linear_sum_assignment(np.asarray(cost, dtype=float))
    return rows, cols


def matching_cost(mask_logits, class_logits, gt_masks, config=SegmentationConfig()):
    """(K, G) cost used for query/instance assignment."""
    K = len(mask_logits)
    G = len(gt_masks)
    flat = mask_logits.reshape(K, -1)
    gts = np.asarray(gt_masks, dtype=float).reshape(G, -1)
    p_human = softmax(class_logits, axis=1)[:, 1]
    prob = expit(flat)
    npix = flat.shape[1]
    pos = bce_with_logits(flat, 1.0)
    neg = bce_with_logits(flat, 0.0)
    c_bce = (pos @ gts.T + neg @ (1 - gts).T) / npix
    num = 2 * prob @ gts.T
    den = prob.sum(1)[:, None] + gts.sum(1)[None, :]
    c_dice = 1 - np.where(den > 0, num / np.where(den > 0, den, 1), 1.0)
    return (-config.class_weight * p_human[:, None] + config.bce_weight * c_bce
            + config.dice_weight * c_dice)


def segmentation_loss(mask_logits, class_logits, gt_masks, config=SegmentationConfig()):
    """Set-prediction loss: Hungarian matching, then classification + BCE + dice.

    ``mask_logits`` is (K, H, W), ``class_logits`` is (K, 2) with column 1 the
    human class, ``gt_masks`` is (G, H, W) binary.  Unmatched queries are
    supervised towards background, down-weighted by ``background_weight``.
    """
    mask_logits = np.asarray(mask_logits, dtype=float)
    class_logits = np.asarray(class_logits, dtype=float)
    gt = np.asarray(gt_masks, dtype=float)
    if gt.size == 0:
        gt = gt.reshape((0,) + mask_logits.shape[1:])
    K = len(mask_logits)
    G = len(gt)
    if class_logits.shape != (K, 2):
        raise ShapeMismatch("class logits must be (K, 2)")
    if G and gt.shape[1:] != mask_logits.shape[1:]:
        raise ShapeMismatch("gt masks must match mask grid")
    if G > K:
        raise TooManyInstances("%d instances exceed %d queries" % (G, K))

    rows = cols = np.zeros(0, dtype=np.int64)
    if G:
        rows, cols = hungarian_match(matching_cost(mask_logits, class_logits, gt, config))

    # classification
    target = np.zeros(K, dtype=np.int64)
    target[rows] = 1
    w = np.where(target == 1, 1.0, config.background_weight)
    logp = log_softmax(class_logits, axis=1)
    ce = -logp[np.arange(K), target]
    l_cls = float((w * ce).sum() / w.sum())
    g_cls = softmax(class_logits, axis=1)
    g_cls[np.arange(K), target] -= 1
    g_cls *= (w / w.sum())[:, None]

    g_mask = np.zeros_like(mask_logits)
    l_bce = l_dice = 0.0
    if G:
        npix = mask_logits[0].size
        for q, g in zip(rows, cols):
            x = mask_logits[q]
            y = gt[g]
            p = expit(x)
            l_bce += bce_with_logits(x, y).mean() / G
            l_dice += dice_loss(p, y) / G
            g_mask[q] += config.bce_weight * (p - y) / npix / G
            g_mask[q] += config.dice_weight * _dice_grad(p, y) * p * (1 - p) / G
    value = config.class_weight * l_cls + config.bce_weight * l_bce + config.dice_weight * l_dice
    return LossValue(float(value), {
        "mask_logits": g_mask.ravel(),
        "class_logits": (config.class_weight * g_cls).ravel(),
    })


def densepose_loss(pred, gt, valid=None):
    """Squared error summed over the three channels, averaged over valid pixels."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    _same_shape(pred, gt)
    if valid is None:
        valid = np.ones(pred.shape[:-1], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != pred.shape[:-1]:
        raise ShapeMismatch("valid mask must match the densepose grid")
    nv = int(valid.sum())
    grad = np.zeros_like(pred)
    if nv == 0:
        return LossValue(0.0, {"pred": grad.ravel()})
    diff = np.where(valid[..., None], pred - gt, 0.0)
    value = float(np.sum(diff ** 2) / nv)
    grad = 2.0 * diff / nv
    return LossValue(value, {"pred": grad.ravel()})


def binary_mask_loss(logits, gt):
    """Mean binary cross-entropy of per-pixel logits against a binary mask."""
    x = np.asarray(logits, dtype=float)
    y = np.asarray(gt, dtype=float)
    _same_shape(x, y)
    if x.size == 0:
        return LossValue(0.0, {"logits": np.zeros(0)})
    value = float(bce_with_logits(x, y).mean())
    grad = (expit(x) - y) / x.size
    return LossValue(value, {"logits": grad.ravel()})


def total_loss(l_recon, l_seg, l_dp, l_mask, weights=LossWeights()):
    """Base reconstruction loss plus the weighted human-head losses."""
    parts = (l_recon, l_seg, l_dp, l_mask)
    if not all(np.isfinite(parts)):
        raise ValueError("loss components must be finite")
    return (float(l_recon) + weights.segmentation * float(l_seg)
            + weights.densepose * float(l_dp) + weights.mask * float(l_mask))
