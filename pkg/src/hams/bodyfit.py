"""Fitting the SMPL-lite body to semantic 3D points.

Each observed point carries a canonical body coordinate (the continuous
DensePose value), which pins it to its nearest template vertex.  Fitting is a
closed-form similarity initialisation followed by damped Gauss-Newton on
root, pose and shape under a Huber kernel and L2 priors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .body import BETA_LIMIT, JOINT_ANGLE_LIMIT, BodyParams, build_template, skin
from .errors import DegenerateConfiguration, DegenerateCorrespondences, TooFewPoints
from .geometry import Sim3, skew, so3_exp, so3_log, umeyama_sim3

TIE_RTOL = 1e-9
MIN_POINTS = 30


def _nearest_lowest_index(tree, verts, queries, k=8):
    """Exact nearest vertex; near-ties (relative 1e-9) resolve to the lower index."""
    k = min(k, len(verts))
    dist, idx = tree.query(queries, k=k)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    tie = dist <= dist[:, :1] * (1 + TIE_RTOL) + 1e-15
    masked = np.where(tie, idx, np.iinfo(np.int64).max)
    return masked.min(axis=1)


_TREES = {}


def correspondences_from_densepose(canonical_coords, template=None):
    """Map normalised canonical coordinates in [0,1]^3 to template vertex indices."""
    template = template or build_template()
    coords = np.asarray(canonical_coords, dtype=float).reshape(-1, 3)
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64)
    key = id(template)
    if key not in _TREES:
        _TREES[key] = cKDTree(template.vertices)
    pts = template.denormalize(np.clip(coords, 0.0, 1.0))
    return _nearest_lowest_index(_TREES[key], template.vertices, pts)


def huber(r, delta):
    r = np.asarray(r, dtype=float)
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


@dataclass
class FitOptions:
    huber_delta: float = 0.05
    max_iters: int = 100
    tol: float = 1e-12
    init_damping: float = 1e-3
    fit_shape: bool = True


@dataclass
class FitReport:
    params: BodyParams
    objective_trace: list = field(default_factory=list)
    inliers: int = 0
    rmse: float = 0.0
    vertex_ids: np.ndarray = None
    converged: bool = False


# parameter layout: [log scale, root rot (3), root trans (3), pose of joints 1.. (3 each), betas]
def _layout(template):
    n_pose = 3 * (template.n_joints - 1)
    return 7, n_pose, template.n_betas


def _jacobian(template, sk, params, vids):
    """(n, 3, P) derivative of the selected world vertices w.r.t. local increments."""
    root = params.root
    sR = root.scale * root.rotation
    n0, n_pose, nb = _layout(template)
    P = n0 + n_pose + nb
    Jac = np.zeros((len(vids), 3, P))
    posed = sk.posed_local[vids]
    world_rel = posed @ sR.T

    Jac[:, :, 0] = world_rel
    Jac[:, :, 1:4] = -skew(world_rel)
    Jac[:, :, 4:7] = np.eye(3)

    W = template.skin_weights[vids]                  # (n, J)
    Y = sk.per_joint[vids]                            # (n, J, 3)
    sub = template.subtree_mask                       # (J, J)
    WY = W[:, :, None] * Y
    for m in range(1, template.n_joints):
        mask = sub[m]
        A = WY[:, mask].sum(axis=1) - W[:, mask].sum(axis=1)[:, None] * sk.global_pos[m]
        Jac[:, :, n0 + 3 * (m - 1):n0 + 3 * m] = sR @ (-skew(A)) @ sk.global_rot[m]

    Rg, pg = sk.global_rot, sk.global_pos
    for b in range(nb):
        S = template.shapedirs[b]
        dJ = template.regressor @ S
        dp = np.empty_like(dJ)
        for k in range(template.n_joints):
            p = template.parents[k]
            dp[k] = dJ[k] if p < 0 else dp[p] + Rg[p] @ (dJ[k] - dJ[p])
        per = np.einsum("jab,vjb->vja", Rg, S[vids][:, None, :] - dJ[None]) + dp[None]
        Jac[:, :, n0 + n_pose + b] = np.einsum("vj,vja->va", W, per) @ sR.T
    return Jac


def _retract(params, delta, template, fit_shape):
    n0, n_pose, nb = _layout(template)
    root = params.root
    scale = root.scale * np.exp(delta[0])
    dR = so3_exp(delta[1:4])
    rot = dR @ root.rotation
    trans = root.translation + delta[4:7]
    pose = params.pose.copy()
    inc = delta[n0:n0 + n_pose].reshape(-1, 3)
    R_new = so3_exp(pose[1:]) @ so3_exp(inc)
    pose[1:] = so3_log(R_new)
    ang = np.linalg.norm(pose, axis=1)
    over = ang > JOINT_ANGLE_LIMIT
    pose[over] *= (JOINT_ANGLE_LIMIT[over] / ang[over])[:, None]
    betas = params.betas.copy()
    if fit_shape:
        betas = np.clip(betas + delta[n0 + n_pose:], -BETA_LIMIT, BETA_LIMIT)
    return BodyParams(betas, pose, Sim3(scale, rot, trans))


def _objective(template, params, pts, w, vids, lam_theta, lam_beta, delta):
    sk = skin(template, params)
    r = pts - sk.vertices[vids]
    rn = np.linalg.norm(r, axis=1)
    f = float((w * huber(rn, delta)).sum()
              + lam_theta * np.sum(params.pose ** 2) + lam_beta * np.sum(params.betas ** 2))
    return f, sk, r, rn


def fit_body(points, canonical_coords, confidences=None, template=None,
             lambda_theta=1e-6, lambda_beta=1e-5, options=None, vertex_ids=None):
    """Fit body parameters to corresponded 3D points.

    ``vertex_ids`` overrides the DensePose lookup when exact correspondences
    are already known.
    """
    template = template or build_template()
    opts = options or FitOptions()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n < MIN_POINTS:
        raise TooFewPoints("need >= %d points, got %d" % (MIN_POINTS, n))
    w = np.ones(n) if confidences is None else np.asarray(confidences, dtype=float).reshape(-1)
    if vertex_ids is None:
        vids = correspondences_from_densepose(canonical_coords, template)
    else:
        vids = np.asarray(vertex_ids, dtype=np.int64)
    if len(np.unique(vids)) < 4:
        raise DegenerateCorrespondences("points map to fewer than 4 distinct vertices")

    try:
        root = umeyama_sim3(template.vertices[vids], pts, w, allow_scale=True)
    except DegenerateConfiguration as exc:
        raise DegenerateCorrespondences(str(exc)) from exc
    params = BodyParams(root=root)

    n0, n_pose, nb = _layout(template)
    P = n0 + n_pose + nb
    prior = np.zeros(P)
    prior[n0:n0 + n_pose] = 2 * lambda_theta
    prior[n0 + n_pose:] = 2 * lambda_beta if opts.fit_shape else 0.0

    f, sk, r, rn = _objective(template, params, pts, w, vids, lambda_theta, lambda_beta, opts.huber_delta)
    trace = [f]
    mu = opts.init_damping
    converged = False
    for _ in range(opts.max_iters):
        irls = w * np.where(rn <= opts.huber_delta, 1.0, opts.huber_delta / np.maximum(rn, 1e-300))
        uniq, inv = np.unique(vids, return_inverse=True)
        Jv = _jacobian(template, sk, params, uniq)[inv]           # (n, 3, P), residual = pts - v
        H = np.einsum("n,nai,naj->ij", irls, Jv, Jv) + np.diag(prior)
        g = -np.einsum("n,nai,na->i", irls, Jv, r)
        g[n0:n0 + n_pose] += 2 * lambda_theta * params.pose[1:].reshape(-1)
        if opts.fit_shape:
            g[n0 + n_pose:] += 2 * lambda_beta * params.betas
        else:
            H[n0 + n_pose:, :] = 0
            H[:, n0 + n_pose:] = 0
            H[n0 + n_pose:, n0 + n_pose:] = np.eye(nb)
            g[n0 + n_pose:] = 0
        diag = np.diag(H).copy()
        accepted = False
        for _ in range(30):
            A = H + mu * np.diag(diag + 1e-12)
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = _retract(params, step, template, opts.fit_shape)
            f_new, sk_new, r_new, rn_new = _objective(template, cand, pts, w, vids,
                                                      lambda_theta, lambda_beta, opts.huber_delta)
            if f_new <= f:
                accepted = True
                break
            mu *= 4
        if not accepted:
            converged = True
            break
        rel = (f - f_new) / max(f, 1e-300)
        params, sk, r, rn, f = cand, sk_new, r_new, rn_new, f_new
        trace.append(f)
        mu = max(mu / 3, 1e-12)
        if rel <= opts.tol or np.abs(step).max() < 1e-13:
            converged = True
            break

    rmse = float(np.sqrt(np.mean(rn ** 2)))
    inliers = int((rn <= opts.huber_delta).sum())
    return FitReport(params, trace, inliers, rmse, vids, converged)
