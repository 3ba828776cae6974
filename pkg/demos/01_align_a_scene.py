"""
Aligning pair predictions into one scene
========================================

Render a synthetic room with people from a ring of cameras, turn every
ordered camera pair into a two-view prediction, then recover all camera
poses from those predictions alone.
"""

import numpy as np

from hams.alignment import PairGraph, align, extract_cameras, init_poses_spanning_tree
from hams.metrics import camera_metrics
from hams.oracle import NoiseSpec, generate_scene, make_graph_predictions

# a 5-camera scene with 3 people; depth predictions carry 1% relative noise
scene = generate_scene(seed=11, cameras=5, persons=(3, 3))
preds, views = make_graph_predictions(scene, NoiseSpec(depth_sigma=0.01), seed=11)
graph = PairGraph(scene.n_views, preds)
print("views:", graph.n_views, " pair predictions:", len(graph.keys))

# a spanning tree over the most confident pairs gives a first guess
init = init_poses_spanning_tree(graph)
m0 = camera_metrics(extract_cameras(graph, init), scene.cameras)
print("spanning tree   AE %.3f deg  RRA %.2f  s-CCA %.2f" % (m0.ae, m0.rra, m0.s_cca))

# joint refinement of poses and per-pair scales on the robust energy
state = align(graph)
m1 = camera_metrics(extract_cameras(graph, state), scene.cameras)
print("refined         AE %.3f deg  RRA %.2f  s-CCA %.2f" % (m1.ae, m1.rra, m1.s_cca))
print("energy trace: %.4g -> %.4g over %d steps"
      % (state.energy_trace[0], state.energy_trace[-1], len(state.energy_trace) - 1))

# estimated focal lengths against the truth
for c, g in zip(extract_cameras(graph, state), scene.cameras):
    print("focal  est %7.2f  true %7.2f" % (c.focal, g.focal))
