"""Cross-pair reconciliation of instance IDs and DensePose, and the semantic cloud."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import CONF_FLOOR
from .errors import MissingView, ShapeMismatch
from .parallel import ordered_map

IOU_THRESHOLD = 0.5
BACKGROUND_COLOR = np.array([128, 128, 128], dtype=np.uint8)
SEMANTIC_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
], dtype=np.uint8)


def instance_color(gid):
    if gid <= 0:
        return BACKGROUND_COLOR
    return SEMANTIC_PALETTE[(gid - 1) % len(SEMANTIC_PALETTE)]


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller node becomes the root so the result is order independent
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


@dataclass
class IdMap:
    mapping: dict       # (edge key, slot, local id) -> global id
    n_instances: int

    def __call__(self, key, slot, local):
        return self.mapping[(key, slot, local)]

    def lut(self, key, slot, max_local):
        """Array mapping local ids 0..max_local to global ids (0 stays 0)."""
        out = np.zeros(max_local + 1, dtype=np.int64)
        for (k, s, l), g in self.mapping.items():
            if k == key and s == slot and l <= max_local:
                out[l] = g
        return out

    def relabel(self, key, slot, inst):
        inst = np.asarray(inst)
        return self.lut(key, slot, int(inst.max(initial=0)))[inst]


def mask_iou(labels_a, labels_b):
    """IoU matrix between the positive labels of two label images.

    Row ``r`` is label ``r + 1`` of ``labels_a``; column likewise for ``b``.
    """
    a = np.asarray(labels_a, dtype=np.int64).ravel()
    b = np.asarray(labels_b, dtype=np.int64).ravel()
    ka, kb = int(a.max(initial=0)), int(b.max(initial=0))
    joint = np.bincount(a * (kb + 1) + b, minlength=(ka + 1) * (kb + 1)).reshape(ka + 1, kb + 1)
    inter = joint[1:, 1:].astype(float)
    area_a = joint[1:].sum(axis=1).astype(float)
    area_b = joint[:, 1:].sum(axis=0).astype(float)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def greedy_match(iou, threshold=IOU_THRESHOLD):
    """One-to-one matches by descending IoU; ties broken by (row, column)."""
    r, c = np.nonzero(iou >= threshold)
    order = np.lexsort((c, r, -iou[r, c]))
    used_r, used_c, out = set(), set(), []
    for k in order:
        if r[k] in used_r or c[k] in used_c:
            continue
        used_r.add(r[k])
        used_c.add(c[k])
        out.append((int(r[k]), int(c[k])))
    return out


def resolve_instance_ids(graph, threshold=IOU_THRESHOLD):
    """Merge pair-local instance IDs across all edges into dense global IDs.

    A pair-local ID names the same person in both slots of its edge.  Per
    image, every two contributions are matched greedily on mask IoU and the
    matches are merged with union-find.
    """
    uf = _UnionFind()
    for key in graph.keys:
        e = graph.edges[key]
        for inst in (e.inst0, e.inst1):
            for l in np.unique(inst):
                if l > 0:
                    uf.add((key, int(l)))

    for v in range(graph.n_views):
        contribs = graph.contributions(v)
        masks = [graph.edges[k].slot(s)[2] for k, s in contribs]
        for a in range(len(contribs)):
            for b in range(a + 1, len(contribs)):
                ka, kb = contribs[a][0], contribs[b][0]
                if ka == kb:
                    continue
                for ra, cb in greedy_match(mask_iou(masks[a], masks[b]), threshold):
                    uf.union((ka, ra + 1), (kb, cb + 1))

    roots = sorted({uf.find(x) for x in uf.parent})
    gid = {r: n + 1 for n, r in enumerate(roots)}
    mapping = {}
    for key in graph.keys:
        e = graph.edges[key]
        for slot, inst in ((0, e.inst0), (1, e.inst1)):
            for l in np.unique(inst):
                if l > 0:
                    mapping[(key, slot, int(l))] = gid[uf.find((key, int(l)))]
    return IdMap(mapping, len(roots))


def aggregate_densepose(densepose, validity, confidences):
    """Confidence-weighted mean of several DensePose grids of one image.

    Returns ``(fused, weight)`` with ``weight = sum c_k v_k``; pixels with zero
    weight are zero.
    """
    dps = [np.asarray(d, dtype=float) for d in densepose]
    vs = [np.asarray(v, dtype=float) for v in validity]
    cs = [np.asarray(c, dtype=float) for c in confidences]
    if not dps or not (len(dps) == len(vs) == len(cs)):
        raise ShapeMismatch("need matching, non-empty contribution lists")
    shape = dps[0].shape
    for d, v, c in zip(dps, vs, cs):
        if d.shape != shape or v.shape != shape[:-1] or c.shape != shape[:-1]:
            raise ShapeMismatch("contribution grids differ in shape")
    num = np.zeros(shape)
    weight = np.zeros(shape[:-1])
    for d, v, c in zip(dps, vs, cs):
        w = c * v
        num += w[..., None] * d
        weight += w
    fused = np.zeros(shape)
    nz = weight > 0
    fused[nz] = num[nz] / weight[nz][:, None]
    return fused, weight


@dataclass
class FusedView:
    view: int
    densepose: np.ndarray   # (H, W, 3)
    weight: np.ndarray      # (H, W)
    instance: np.ndarray    # (H, W) global ids
    silhouette: np.ndarray  # (H, W) bool


def fuse_view(graph, idmap, view):
    contribs = graph.contributions(view)
    if not contribs:
        raise MissingView("view %d has no predictions" % view)
    slots = [graph.edges[k].slot(s) for k, s in contribs]
    dp, weight = aggregate_densepose([x[3] for x in slots], [x[4] for x in slots],
                                     [x[1] for x in slots])
    # instance grid by confidence-weighted vote; ties go to the lowest label
    H, W = slots[0][1].shape
    votes = np.zeros((idmap.n_instances + 1, H, W))
    rr, cc = np.indices((H, W))
    for (key, s), x in zip(contribs, slots):
        g = idmap.relabel(key, s, x[2])
        votes[g, rr, cc] += x[1]
    inst = np.argmax(votes, axis=0)
    human = inst > 0
    dp = np.where(human[..., None], dp, 0.0)
    weight = np.where(human, weight, 0.0)
    return FusedView(view, dp, weight, inst, human)


def fuse_views(graph, idmap):
    return ordered_map(lambda v: fuse_view(graph, idmap, v), range(graph.n_views))


@dataclass
class SemanticPointCloud:
    positions: np.ndarray    # (N, 3) world
    colors: np.ndarray       # (N, 3) uint8
    views: np.ndarray        # (N,)
    pixels: np.ndarray       # (N, 2) row, col
    instance: np.ndarray     # (N,) global id, 0 for non-human
    canonical: np.ndarray    # (N, 3), meaningful where has_canonical
    has_canonical: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def human(self):
        return self.instance > 0

    def subset(self, keep):
        return SemanticPointCloud(*(getattr(self, f)[keep] for f in _CLOUD_FIELDS))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.int64),
                   np.zeros((0, 2), np.int64), np.zeros(0, np.int64), np.zeros((0, 3)),
                   np.zeros(0, bool), np.zeros(0))

    @classmethod
    def concatenate(cls, parts):
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in _CLOUD_FIELDS))


_CLOUD_FIELDS = ("positions", "colors", "views", "pixels", "instance", "canonical",
                 "has_canonical", "confidence")


def _view_cloud(graph, state, fused, conf_floor):
    v = fused.view
    contribs = graph.contributions(v)
    confs = np.stack([graph.edges[k].slot(s)[1] for k, s in contribs])
    best = np.argmax(confs, axis=0)           # first (lowest key) wins ties
    cmax = np.take_along_axis(confs, best[None], axis=0)[0]
    rows, cols = np.nonzero(cmax >= conf_floor)
    pos = np.zeros((len(rows), 3))
    pick = best[rows, cols]
    for n, (key, s) in enumerate(contribs):
        sel = pick == n
        if sel.any():
            X = graph.edges[key].slot(s)[0]
            pos[sel] = state.edge_transform(key).apply(X[rows[sel], cols[sel]])
    inst = fused.instance[rows, cols].astype(np.int64)
    has = (inst > 0) & (fused.weight[rows, cols] > 0)
    canon = np.where(has[:, None], fused.densepose[rows, cols], 0.0)
    colors = np.where(inst[:, None] > 0,
                      SEMANTIC_PALETTE[(np.maximum(inst, 1) - 1) % len(SEMANTIC_PALETTE)],
                      BACKGROUND_COLOR).astype(np.uint8)
    return SemanticPointCloud(pos, colors, np.full(len(rows), v, np.int64),
                              np.stack([rows, cols], axis=1).astype(np.int64), inst,
                              canon, has, cmax[rows, cols].astype(float))


def build_semantic_pointcloud(graph, state, idmap, fused_views, conf_floor=CONF_FLOOR):
    """Lift every pixel above the confidence floor into the world frame.

    Each pixel keeps its highest-confidence prediction; labels come from the
    fused instance grid and canonical coordinates from fused DensePose.
    """
    by_view = {f.view: f for f in fused_views}
    if len(state.poses) < graph.n_views:
        raise MissingView("alignment covers %d of %d views" % (len(state.poses), graph.n_views))
    missing = [v for v in range(graph.n_views) if v not in by_view]
    if missing:
        raise MissingView("no fused view for %s" % missing)
    parts = ordered_map(lambda v: _view_cloud(graph, state, by_view[v], conf_floor),
                        range(graph.n_views))
    return SemanticPointCloud.concatenate(parts)
