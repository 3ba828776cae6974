"""Global alignment of pairwise pointmaps into one world frame.

Every ordered pair ``e = (i, j)`` predicts both views' points in camera
``i``'s frame at its own arbitrary scale.  Unknowns are one rigid pose per
view (view 0 fixed to identity) and one scale per edge; a world point of
``e`` is ``R_i (sigma_e X) + t_i``.  The scale gauge is fixed by holding
sigma at 1 on the reference edge, the highest-confidence edge leaving view 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.sparse import coo_matrix

from .errors import (DegenerateConfiguration, DegenerateEdge, DisconnectedGraph,
                     NonFiniteEnergy)
from .geometry import Camera, Sim3, estimate_focal, image_center, so3_exp, umeyama_sim3
from .parallel import ordered_map

CONF_FLOOR = 1.5


@dataclass
class PairGraph:
    n_views: int
    edges: dict    # (i, j) -> PairPrediction

    def __post_init__(self):
        if not isinstance(self.edges, dict):
            self.edges = {e.key: e for e in self.edges}
        for (i, j), e in self.edges.items():
            if (e.i, e.j) != (i, j):
                raise ValueError("edge key does not match prediction")
            if not (0 <= i < self.n_views and 0 <= j < self.n_views):
                raise ValueError("edge (%d, %d) out of range" % (i, j))

    @property
    def keys(self):
        return sorted(self.edges)

    def is_connected(self):
        if self.n_views == 1:
            return True
        rows = [i for i, j in self.edges] + [j for i, j in self.edges]
        cols = [j for i, j in self.edges] + [i for i, j in self.edges]
        A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_views,) * 2)
        n, _ = connected_components(A, directed=False)
        return n == 1

    def contributions(self, view):
        """(edge key, slot) pairs that carry a prediction for ``view``."""
        out = []
        for key in self.keys:
            i, j = key
            if i == view:
                out.append((key, 0))
            if j == view and not (i == j):
                out.append((key, 1))
        return out

    def self_edge(self, view):
        """Highest total-confidence edge that has ``view`` in its first slot."""
        best, best_c = None, -np.inf
        for key in self.keys:
            if key[0] == view:
                c = float(self.edges[key].C0.sum())
                if c > best_c:
                    best, best_c = key, c
        return best


@dataclass
class AlignmentState:
    poses: list            # Sim3 per view, unit scale, view-to-world
    sigmas: dict           # edge key -> scale
    reference_edge: tuple
    energy: float = np.nan
    energy_trace: list = field(default_factory=list)

    def __post_init__(self):
        p0 = self.poses[0]
        if not p0.is_close(Sim3(), atol=1e-12):
            raise ValueError("view 0 pose must be the identity (gauge)")
        if any(s <= 0 for s in self.sigmas.values()):
            raise ValueError("edge scales must be positive")

    def edge_transform(self, key):
        """Sim3 mapping edge ``key`` predictions (frame i, edge scale) into the world."""
        pose = self.poses[key[0]]
        return Sim3(self.sigmas[key], pose.rotation, pose.translation)

    def copy(self):
        return AlignmentState(list(self.poses), dict(self.sigmas), self.reference_edge,
                              self.energy, list(self.energy_trace))


def _weights(C, floor):
    w = np.where(C >= floor, C, 0.0)
    return w.ravel()


def _edge_relative(graph, key, floor):
    """Sim3 S with S(self-frame points of the other view) ~ edge prediction of that view."""
    i, j = key
    e = graph.edges[key]
    own = graph.self_edge(j)
    if own is None:
        raise DegenerateEdge("view %d never appears first in a pair" % j)
    src = graph.edges[own].X0.reshape(-1, 3)
    w = np.minimum(_weights(graph.edges[own].C0, floor), _weights(e.C1, floor))
    if (w > 0).sum() < 3:
        raise DegenerateEdge("edge %s has < 3 confident pixels" % (key,))
    try:
        return umeyama_sim3(src, e.X1.reshape(-1, 3), w, allow_scale=True)
    except DegenerateConfiguration as exc:
        raise DegenerateEdge("edge %s: %s" % (key, exc)) from exc


def _edge_self_scale(graph, key, floor):
    """Scale of edge ``key``'s first-view prediction relative to that view's self frame."""
    i = key[0]
    own = graph.self_edge(i)
    if own == key:
        return 1.0
    e = graph.edges[key]
    src = graph.edges[own].X0.reshape(-1, 3)
    w = np.minimum(_weights(graph.edges[own].C0, floor), _weights(e.C0, floor))
    if (w > 0).sum() < 3:
        raise DegenerateEdge("edge %s has < 3 confident pixels" % (key,))
    try:
        return umeyama_sim3(src, e.X0.reshape(-1, 3), w, allow_scale=True).scale
    except DegenerateConfiguration as exc:
        raise DegenerateEdge("edge %s: %s" % (key, exc)) from exc


def init_poses_spanning_tree(graph, conf_floor=CONF_FLOOR):
    """Closed-form initialisation chained along a maximum-confidence spanning tree."""
    N = graph.n_views
    if not graph.edges:
        raise DisconnectedGraph("graph has no edges")
    if not graph.is_connected():
        raise DisconnectedGraph("view graph is not connected")
    ref = graph.self_edge(0)
    if ref is None:
        raise DegenerateEdge("view 0 never appears first in a pair")

    # undirected tree over total confidence (max tree == min tree on negated weights)
    best = {}
    for key in graph.keys:
        i, j = key
        if i == j:
            continue
        u = (min(i, j), max(i, j))
        c = float(np.sum(_weights(graph.edges[key].C1, conf_floor)))
        if u not in best or c > best[u][0]:
            best[u] = (c, key)
    adj = {v: [] for v in range(N)}
    if best:
        us = sorted(best)
        top = max(c for c, _ in best.values()) + 1.0
        M = coo_matrix(([top - best[u][0] + 1e-9 for u in us],
                        ([u[0] for u in us], [u[1] for u in us])), shape=(N, N)).tocsr()
        T = minimum_spanning_tree(M).tocoo()
        for a, b in sorted(zip(T.row.tolist(), T.col.tolist())):
            key = best[(min(a, b), max(a, b))][1]
            adj[a].append((b, key))
            adj[b].append((a, key))

    poses = [None] * N
    lam = [None] * N              # world = P_v(lam_v * self_frame_v)
    poses[0], lam[0] = Sim3(), 1.0
    order = [0]
    seen = {0}
    while order:
        v = order.pop(0)
        for w, key in sorted(adj[v]):
            if w in seen:
                continue
            i, j = key
            if i == v:
                kappa = _edge_self_scale(graph, key, conf_floor)
                sigma = lam[v] / kappa
                S = _edge_relative(graph, key, conf_floor)
                poses[w] = poses[v] @ Sim3(1.0, S.rotation, sigma * S.translation)
                lam[w] = sigma * S.scale
            else:
                # stored edge is (w, v): it predicts v's geometry in w's frame
                S = _edge_relative(graph, key, conf_floor)
                sigma = lam[v] / S.scale
                rel = Sim3(1.0, S.rotation, sigma * S.translation)   # v-frame -> w-frame
                poses[w] = poses[v] @ rel.inverse()
                lam[w] = sigma * _edge_self_scale(graph, key, conf_floor)
            seen.add(w)
            order.append(w)
    if any(p is None for p in poses):
        raise DisconnectedGraph("spanning tree does not reach every view")

    sigmas = {}
    for key in graph.keys:
        sigmas[key] = 1.0 if key == ref else lam[key[0]] / _edge_self_scale(graph, key, conf_floor)
    state = AlignmentState(poses, sigmas, ref)
    state.energy = alignment_energy(graph, state, conf_floor=conf_floor)
    state.energy_trace = [state.energy]
    return state


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass
class RefineOptions:
    iterations: int = 100
    step: float = 1.0
    tolerance: float = 1e-8
    stride: int = 2
    residual_floor: float = 1e-10     # stop once the mean residual (m) is below this
    conf_floor: float = CONF_FLOOR
    eps: float = 1e-9
    max_halvings: int = 30


class _Problem:
    """Flattened residual blocks, one per (edge, slot), in fixed key order."""

    def __init__(self, graph, stride, floor):
        self.graph = graph
        self.blocks = []
        for key in graph.keys:
            e = graph.edges[key]
            slots = (0,) if key[0] == key[1] else (0, 1)
            for s in slots:
                X, C = e.slot(s)[:2]
                Xs = X[::stride, ::stride]
                Cs = C[::stride, ::stride]
                shape = Cs.shape
                w = _weights(Cs, floor)
                self.blocks.append((key, e.view(s), Xs.reshape(-1, 3), w, shape))
        self.view_shape = {}
        for key, v, X, w, shape in self.blocks:
            self.view_shape[v] = shape

    def world_predictions(self, state):
        def one(block):
            key, v, X, w, _ = block
            return state.edge_transform(key).apply(X)
        return ordered_map(one, self.blocks)

    def anchors(self, preds):
        """Confidence-weighted mean world point per view pixel."""
        num, den = {}, {}
        for (key, v, X, w, _), Y in zip(self.blocks, preds):
            if v not in num:
                num[v] = np.zeros_like(Y)
                den[v] = np.zeros(len(Y))
            num[v] += w[:, None] * Y
            den[v] += w
        return {v: num[v] / np.maximum(den[v], 1e-300)[:, None] for v in num}

    def energy(self, preds, anchors, eps):
        total = 0.0
        for (key, v, X, w, _), Y in zip(self.blocks, preds):
            r = anchors[v] - Y
            total += float(w @ (np.sqrt(np.einsum("nc,nc->n", r, r) + eps * eps) - eps))
        return total


def alignment_energy(graph, state, stride=1, conf_floor=CONF_FLOOR, eps=1e-9):
    prob = _Problem(graph, stride, conf_floor)
    preds = prob.world_predictions(state)
    return prob.energy(preds, prob.anchors(preds), eps)


def refine_global_alignment(graph, init, options=None, **kw):
    """Preconditioned first-order descent on view poses and log edge scales.

    Each iteration anchors every pixel to the confidence-weighted mean of its
    current world predictions, takes a gradient step with the anchors held,
    and accepts it only if the full energy drops; otherwise the step halves.
    """
    opts = options or RefineOptions(**kw)
    prob = _Problem(graph, opts.stride, opts.conf_floor)
    state = init.copy()
    free_views = list(range(1, graph.n_views))
    free_edges = [k for k in graph.keys if k != state.reference_edge]

    preds = prob.world_predictions(state)
    anchors = prob.anchors(preds)
    E = prob.energy(preds, anchors, opts.eps)
    if not np.isfinite(E):
        raise NonFiniteEnergy("initial energy is not finite")
    trace = [E]
    scale = None
    wtot = sum(float(b[3].sum()) for b in prob.blocks)

    for _ in range(opts.iterations):
        if E <= opts.residual_floor * wtot:
            break
        g_rot = {v: np.zeros(3) for v in free_views}
        g_tr = {v: np.zeros(3) for v in free_views}
        h_rot = {v: 0.0 for v in free_views}
        h_tr = {v: 0.0 for v in free_views}
        g_sig = {k: 0.0 for k in free_edges}
        h_sig = {k: 0.0 for k in free_edges}
        res_norms = []
        for (key, v, X, w, _), Y in zip(prob.blocks, preds):
            r = anchors[v] - Y
            rn = np.sqrt(np.einsum("nc,nc->n", r, r) + opts.eps ** 2)
            rhat = r / rn[:, None]
            pose = state.poses[key[0]]
            a = Y - pose.translation                       # sigma * R X
            wsum = w.sum()
            res_norms.append(rn[w > 0])
            i = key[0]
            if i in g_rot:
                g_rot[i] += (w[:, None] * np.cross(rhat, a)).sum(axis=0)
                g_tr[i] += -(w[:, None] * rhat).sum(axis=0)
                aa = np.einsum("nc,nc->n", a, a)
                h_rot[i] += float(w @ aa)
                h_tr[i] += wsum
            if key in g_sig:
                g_sig[key] += -float(w @ np.einsum("nc,nc->n", rhat, a))
                h_sig[key] += float(w @ np.einsum("nc,nc->n", a, a))
        if scale is None:
            allr = np.concatenate(res_norms) if res_norms else np.zeros(1)
            scale = opts.step * max(float(np.median(allr)), 1e-12)

        accepted = False
        for _ in range(opts.max_halvings):
            cand = state.copy()
            for v in free_views:
                P = state.poses[v]
                dr = -scale * g_rot[v] / max(h_rot[v], 1e-300)
                dt = -scale * g_tr[v] / max(h_tr[v], 1e-300)
                cand.poses[v] = Sim3(1.0, so3_exp(dr) @ P.rotation, P.translation + dt)
            for k in free_edges:
                ds = -scale * g_sig[k] / max(h_sig[k], 1e-300)
                cand.sigmas[k] = state.sigmas[k] * float(np.exp(ds))
            c_preds = prob.world_predictions(cand)
            c_anchors = prob.anchors(c_preds)
            E_new = prob.energy(c_preds, c_anchors, opts.eps)
            if not np.isfinite(E_new):
                raise NonFiniteEnergy("energy became non-finite")
            if E_new < E:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        rel = (E - E_new) / max(E, 1e-300)
        state, preds, anchors, E = cand, c_preds, c_anchors, E_new
        trace.append(E)
        scale *= 1.5
        if rel < opts.tolerance:
            break

    state.energy = E
    state.energy_trace = list(init.energy_trace[:0]) + trace
    return state


def align(graph, options=None, **kw):
    return refine_global_alignment(graph, init_poses_spanning_tree(graph), options, **kw)


def extract_cameras(graph, state):
    """Unit-scale camera poses plus per-view focal from the self-frame pointmap."""
    cams = []
    for v in range(graph.n_views):
        pose = state.poses[v]
        key = graph.self_edge(v)
        if key is None:
            raise DegenerateEdge("view %d has no self-frame prediction" % v)
        X = graph.edges[key].X0
        H, W = X.shape[:2]
        pp = image_center(W, H)
        f = estimate_focal(X, pp)
        cams.append(Camera(Sim3(1.0, pose.rotation, pose.translation), f, pp, W, H))
    return cams


def relative_pose(pose_i, pose_j):
    """Pose of camera j expressed in camera i's frame."""
    return pose_i.inverse() @ pose_j


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Correspondence:
    p0: tuple
    p1: tuple
    score: float


def reciprocal_nn_match(desc0, desc1, stride=1, min_score=None, chunk=2048):
    """Mutual nearest neighbours under dot-product similarity.

    Queries are image 0's strided grid.  Each query searches all of image 1
    and is kept only if that hit's own best match in all of image 0 is the
    query pixel itself.  ``min_score`` optionally drops weak mutual pairs.
    """
    d0 = np.asarray(desc0, dtype=float)
    d1 = np.asarray(desc1, dtype=float)
    if d0.shape[-1] != d1.shape[-1]:
        raise ValueError("descriptor dimensions differ")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    H0, W0_ = d0.shape[:2]
    w1 = d1.shape[1]
    full0 = d0.reshape(-1, d0.shape[-1])
    rows, cols = np.meshgrid(np.arange(0, H0, stride), np.arange(0, W0_, stride), indexing="ij")
    q = (rows * W0_ + cols).ravel()
    A = full0[q]
    B = d1.reshape(-1, d1.shape[-1])
    if len(A) == 0 or len(B) == 0:
        return []

    def best(P, Q):
        idx = np.empty(len(P), dtype=np.int64)
        for lo in range(0, len(P), chunk):
            idx[lo:lo + chunk] = np.argmax(P[lo:lo + chunk] @ Q.T, axis=1)
        return idx

    nn01 = best(A, B)
    hit = np.unique(nn01)
    back = np.full(len(B), -1, dtype=np.int64)
    back[hit] = best(B[hit], full0)
    keep = np.flatnonzero(back[nn01] == q)
    a = q[keep]
    b = nn01[keep]
    A = full0
    score = np.einsum("nd,nd->n", A[a], B[b])
    if min_score is not None:
        keep = score >= min_score
        a, b, score = a[keep], b[keep], score[keep]
    return [Correspondence((int(ai // W0_), int(ai % W0_)),
                           (int(bi // w1), int(bi % w1)), float(sc))
            for ai, bi, sc in zip(a, b, score)]
