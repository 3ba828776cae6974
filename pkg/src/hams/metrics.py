"""Evaluation metrics for humans, cameras, relative poses and depth.

Alignment-based errors take the best of the identity and a Sim3 fitted to
minimise the mean point distance (Umeyama start, then reweighted refinement),
so an aligned error never exceeds its unaligned counterpart.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (CountMismatch, DegenerateConfiguration, DegenerateScene, EmptyValidSet,
                     PersonCountMismatch, ShapeMismatch, ZeroBaseline)
from .geometry import (Sim3, _geodesic_unchecked, angle_between_deg, project_to_rotation,
                       umeyama_sim3)

MAA_THRESHOLDS = np.arange(1, 31)
DEPTH_INLIER_RATIO = 1.03


def _mean_dist(a, b):
    return float(np.mean(np.linalg.norm(a - b, axis=-1))) if len(a) else 0.0


def _weighted_sim3(src, dst, w):
    """Unchecked weighted Umeyama for the inner refinement loop."""
    w = w / w.sum()
    mu_s, mu_d = w @ src, w @ dst
    ds, dd = src - mu_s, dst - mu_d
    var_s = float(w @ (ds * ds).sum(1))
    U, d, Vt = np.linalg.svd((dd * w[:, None]).T @ ds)
    S = np.array([1.0, 1.0, -1.0 if np.linalg.det(U @ Vt) < 0 else 1.0])
    R = (U * S) @ Vt
    scale = float((d * S).sum() / var_s)
    return scale, R, mu_d - scale * R @ mu_s


def fit_sim3_l1(src, dst, iters=300, tol=1e-15, eps=1e-12, allow_degenerate=False):
    """Sim3 minimising the mean Euclidean distance, by reweighted Umeyama.

    Each step is a majorise-minimise update, so the objective never rises.
    With ``allow_degenerate`` collinear or two-point sets are accepted: the
    rotation about their common line is then arbitrary but the residual is not.
    Returns ``(T, mean distance)``.
    """
    try:
        T = umeyama_sim3(src, dst)
        s, R, t = T.scale, T.rotation, T.translation
    except DegenerateConfiguration:
        spread = np.ptp(src, axis=0).max() if len(src) else 0.0
        if not allow_degenerate or len(src) < 2 or spread == 0:
            raise
        s, R, t = _weighted_sim3(src, dst, np.ones(len(src)))
        if not s > 0:
            raise
    r = np.linalg.norm(s * src @ R.T + t - dst, axis=1)
    err = float(r.mean())
    for _ in range(iters):
        s2, R2, t2 = _weighted_sim3(src, dst, 1.0 / np.maximum(r, eps))
        if not s2 > 0:
            break
        r2 = np.linalg.norm(s2 * src @ R2.T + t2 - dst, axis=1)
        e2 = float(r2.mean())
        if not e2 < err:
            break
        done = err - e2 <= tol * max(err, 1e-300)
        s, R, t, r, err = s2, R2, t2, r2, e2
        if done:
            break
    return Sim3(s, project_to_rotation(R), t), err


def best_alignment(src, dst, extra=(), allow_degenerate=False):
    """Lowest mean-distance transform among identity, ``extra`` and the fitted Sim3."""
    best_T, best_e = Sim3(), _mean_dist(src, dst)
    for T in extra:
        e = _mean_dist(T.apply(src), dst)
        if e < best_e:
            best_T, best_e = T, e
    try:
        T, e = fit_sim3_l1(src, dst, allow_degenerate=allow_degenerate)
        if e < best_e:
            best_T, best_e = T, e
    except DegenerateConfiguration:
        pass
    return best_T, best_e


# ---------------------------------------------------------------------------
# humans
# ---------------------------------------------------------------------------

@dataclass
class HumanEvalResult:
    w_mpjpe: float
    ga_mpjpe: float
    pa_mpjpe: float
    per_person_w: list
    per_person_ga: list
    per_person_pa: list

    def to_dict(self):
        return asdict(self)


def mpjpe_suite(pred_joints, gt_joints):
    """World, group-aligned and per-person Procrustes-aligned MPJPE."""
    pred = [np.asarray(p, dtype=float) for p in pred_joints]
    gt = [np.asarray(g, dtype=float) for g in gt_joints]
    if len(pred) != len(gt):
        raise PersonCountMismatch("%d predicted vs %d true people" % (len(pred), len(gt)))
    if not gt:
        raise PersonCountMismatch("no people to evaluate")
    for p, g in zip(pred, gt):
        if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
            raise ShapeMismatch("joint arrays must be matching (J, 3)")
    w = [_mean_dist(p, g) for p, g in zip(pred, gt)]
    P, G = np.concatenate(pred), np.concatenate(gt)
    T_group, _ = best_alignment(P, G)
    ga = [_mean_dist(T_group.apply(p), g) for p, g in zip(pred, gt)]
    pa = [best_alignment(p, g, extra=(T_group,))[1] for p, g in zip(pred, gt)]
    return HumanEvalResult(float(np.mean(w)), float(np.mean(ga)), float(np.mean(pa)), w, ga, pa)


def match_people(pred_roots, gt_roots):
    """Hungarian assignment on root distance; returns ``(pred_idx, gt_idx)``."""
    A = np.asarray(pred_roots, dtype=float).reshape(-1, 3)
    B = np.asarray(gt_roots, dtype=float).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    cost = np.linalg.norm(A[:, None] - B[None], axis=-1)
    return linear_sum_assignment(cost)


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

@dataclass
class CameraEvalResult:
    te: float
    s_te: float
    ae: float
    rra: float
    cca: float
    s_cca: float
    tau_deg: float
    tau_frac: float
    diameter: float

    def to_dict(self):
        return asdict(self)


def align_rotations(pred_R, gt_R):
    """Rotation A minimising ``sum |gt_k - A pred_k|_F^2``."""
    M = sum(g @ p.T for p, g in zip(pred_R, gt_R))
    return project_to_rotation(M)


def camera_metrics(pred, gt, tau_deg=10.0, tau_frac=0.10):
    if len(pred) != len(gt):
        raise CountMismatch("%d predicted vs %d true cameras" % (len(pred), len(gt)))
    if len(gt) < 2:
        raise CountMismatch("need at least two cameras")
    pc = np.array([c.center for c in pred])
    gc = np.array([c.center for c in gt])
    pR = [c.rotation for c in pred]
    gR = [c.rotation for c in gt]
    diam = max(float(np.linalg.norm(a - b)) for a, b in combinations(gc, 2))
    if diam <= 0:
        raise DegenerateScene("ground-truth cameras coincide")

    err = np.linalg.norm(pc - gc, axis=1)
    T, _ = best_alignment(pc, gc, allow_degenerate=True)
    s_err = np.linalg.norm(T.apply(pc) - gc, axis=1)
    A = align_rotations(pR, gR)
    ae = float(np.mean([_geodesic_unchecked(A @ p, g) for p, g in zip(pR, gR)]))
    rel = [_geodesic_unchecked(pR[a].T @ pR[b], gR[a].T @ gR[b])
           for a, b in combinations(range(len(gt)), 2)]
    thr = tau_frac * diam
    return CameraEvalResult(float(err.mean()), float(s_err.mean()), ae,
                            float(np.mean(np.array(rel) < tau_deg)),
                            float(np.mean(err < thr)), float(np.mean(s_err < thr)),
                            float(tau_deg), float(tau_frac), diam)


# ---------------------------------------------------------------------------
# pairwise relative poses
# ---------------------------------------------------------------------------

@dataclass
class PairwisePoseResult:
    rra: float
    rta: float
    maa: float
    rotation_errors: list
    translation_errors: list

    def to_dict(self):
        return asdict(self)


def relative_pose_errors(pred, gt):
    """Per-pair (rotation error, translation-direction error) in degrees."""
    if len(pred) != len(gt):
        raise CountMismatch("pose lists differ in length")
    rot, tra = [], []
    for p, g in zip(pred, gt):
        if np.linalg.norm(g.translation) == 0:
            raise ZeroBaseline("ground-truth pair has zero baseline")
        rot.append(_geodesic_unchecked(p.rotation, g.rotation))
        if np.linalg.norm(p.translation) == 0:
            tra.append(180.0)
        else:
            tra.append(angle_between_deg(p.translation, g.translation))
    return np.array(rot), np.array(tra)


def mean_average_accuracy(rot_err, trans_err, thresholds=MAA_THRESHOLDS):
    worst = np.maximum(np.asarray(rot_err), np.asarray(trans_err))
    if worst.size == 0:
        return 0.0
    return float(np.mean((worst[None, :] < np.asarray(thresholds)[:, None]).mean(axis=1)))


def pairwise_pose_metrics(pred, gt, threshold=15.0):
    rot, tra = relative_pose_errors(pred, gt)
    if rot.size == 0:
        return PairwisePoseResult(0.0, 0.0, 0.0, [], [])
    return PairwisePoseResult(float(np.mean(rot < threshold)), float(np.mean(tra < threshold)),
                              mean_average_accuracy(rot, tra), rot.tolist(), tra.tolist())


def relative_poses(cameras, pairs=None):
    """Camera-to-camera poses ``inv(P_a) P_b`` for every pair ``a < b``."""
    n = len(cameras)
    pairs = pairs or list(combinations(range(n), 2))
    return [cameras[a].pose.inverse() @ cameras[b].pose for a, b in pairs]


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

@dataclass
class DepthEvalResult:
    rel: float
    tau: float
    scale: float

    def to_dict(self):
        return asdict(self)


def depth_metrics(pred, gt, valid=None, median_align=False, threshold=DEPTH_INLIER_RATIO):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ShapeMismatch("depth grids differ in shape")
    valid = np.ones(gt.shape, bool) if valid is None else np.asarray(valid, bool)
    valid = valid & (gt > 0)
    if not valid.any():
        raise EmptyValidSet("no valid depth pixels")
    p, g = pred[valid], gt[valid]
    s = 1.0
    if median_align:
        s = float(np.median(g) / np.median(p))
        p = p * s
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    ratio = np.where(np.isfinite(ratio) & (p > 0), ratio, np.inf)
    return DepthEvalResult(float(np.mean(np.abs(p - g) / g)), float(np.mean(ratio < threshold)), s)
