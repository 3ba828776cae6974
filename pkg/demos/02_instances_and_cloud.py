"""
From local masks to a labelled point cloud
==========================================

Each pair prediction numbers its people arbitrarily.  Overlapping masks on
shared views tie those local numbers together into global identities, after
which densepose maps are fused per view and everything is lifted into one
semantic point cloud.
"""

import os
import tempfile

import numpy as np

from hams import io
from hams.alignment import PairGraph, align
from hams.fusion import build_semantic_pointcloud, fuse_views, resolve_instance_ids
from hams.oracle import NoiseSpec, generate_scene, make_graph_predictions

scene = generate_scene(seed=4, cameras=4, persons=(4, 4))
noise = NoiseSpec(permute_ids=True, densepose_sigma=0.02)
preds, views = make_graph_predictions(scene, noise, seed=4)
graph = PairGraph(scene.n_views, preds)

# the same person carries different local ids in different pairs
e = graph.edges[(0, 1)]
print("pair (0,1) local ids:", e.local_to_global)

idmap = resolve_instance_ids(graph)
print("global instances found:", idmap.n_instances, " true:", len(scene.people))

fused = fuse_views(graph, idmap)
for f, v in zip(fused, views):
    agree = np.mean((f.instance > 0) == (v.instance > 0))
    print("view %d: %5d human pixels, silhouette agreement %.4f" % (f.view, f.silhouette.sum(), agree))

state = align(graph)
cloud = build_semantic_pointcloud(graph, state, idmap, fused)
print("cloud: %d points, %d on people" % (len(cloud), cloud.human.sum()))

out = os.path.join(tempfile.mkdtemp(), "cloud.ply")
io.export_ply(cloud, out)
print("wrote", out, os.path.getsize(out), "bytes")
