"""Multi-view human-aware reconstruction on synthetic scenes.

Pairwise pointmaps with human semantics are aligned into one world frame,
their instance IDs and DensePose maps are reconciled across pairs, and a
parametric body is fitted to each person's semantic points.
"""
from .errors import DataError, HamsError
from .geometry import Camera, Sim3, estimate_focal, rotation_geodesic_deg, umeyama_sim3
from .body import BodyParams, build_template, joints_from_params, skin_body
from .oracle import NoiseSpec, SceneConfig, generate_scene, make_graph_predictions, \
    make_pair_prediction, render_view
from .losses import LossWeights, total_loss
from .alignment import PairGraph, align, extract_cameras, init_poses_spanning_tree, \
    reciprocal_nn_match, refine_global_alignment
from .fusion import aggregate_densepose, build_semantic_pointcloud, fuse_views, \
    resolve_instance_ids
from .bodyfit import fit_body
from .metrics import camera_metrics, depth_metrics, mpjpe_suite, pairwise_pose_metrics

__version__ = "0.1.0"
