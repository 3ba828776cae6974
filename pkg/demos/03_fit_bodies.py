"""
Fitting bodies to the fused cloud
=================================

Human points carry canonical surface coordinates, so every point knows which
template vertex it belongs to.  A Gauss-Newton fit then recovers pose and
shape per person, and the joints are scored against the truth.
"""

import numpy as np

from hams.alignment import PairGraph, align
from hams.body import build_template, joints_from_params
from hams.bodyfit import fit_body
from hams.fusion import build_semantic_pointcloud, fuse_views, resolve_instance_ids
from hams.metrics import match_people, mpjpe_suite
from hams.oracle import generate_scene, make_graph_predictions

T = build_template()
scene = generate_scene(seed=7, cameras=4, persons=(3, 3))
preds, _ = make_graph_predictions(scene)
graph = PairGraph(scene.n_views, preds)
state = align(graph)
idmap = resolve_instance_ids(graph)
cloud = build_semantic_pointcloud(graph, state, idmap, fuse_views(graph, idmap))

# predictions live in camera 0's frame; move them to the world for scoring
to_world = scene.cameras[0].pose
pred_joints = []
for gid in range(1, idmap.n_instances + 1):
    sel = (cloud.instance == gid) & cloud.has_canonical
    rep = fit_body(cloud.positions[sel], cloud.canonical[sel], cloud.confidence[sel], T)
    print("instance %d: %5d points, rmse %.4f, converged %s" % (gid, sel.sum(), rep.rmse, rep.converged))
    pred_joints.append(to_world.apply(joints_from_params(T, rep.params)))

gt_joints = [joints_from_params(T, p) for p, _ in scene.people]
pi, gi = match_people([j[0] for j in pred_joints], [j[0] for j in gt_joints])
r = mpjpe_suite([pred_joints[a] for a in pi], [gt_joints[b] for b in gi])
print("W-MPJPE %.4f  GA-MPJPE %.4f  PA-MPJPE %.4f (metres)" % (r.w_mpjpe, r.ga_mpjpe, r.pa_mpjpe))
