"""Command line: gen, align, fuse, fit, eval and the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .alignment import CONF_FLOOR, RefineOptions, extract_cameras, init_poses_spanning_tree, \
    refine_global_alignment
from .body import build_template, joints_from_params, skin_body
from .bodyfit import MIN_POINTS, fit_body
from .errors import DataError, HamsError
from .fusion import SemanticPointCloud, build_semantic_pointcloud, fuse_views, instance_color, \
    resolve_instance_ids
from .geometry import Camera, pointmap_to_depth
from .metrics import camera_metrics, depth_metrics, match_people, mpjpe_suite, \
    pairwise_pose_metrics, relative_poses
from .oracle import NoiseSpec, generate_scene, make_graph_predictions

METRIC_GROUPS = ("human", "camera", "pairwise", "depth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _person_range(text):
    try:
        if "-" in text:
            lo, hi = (int(x) for x in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--persons expects N or LO-HI, got %r" % text)
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError("--persons range %r is empty" % text)
    return (lo, hi)


def _metric_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in METRIC_GROUPS]
    if bad or not items:
        raise argparse.ArgumentTypeError("--metrics: unknown group(s) %s" % ",".join(bad or [text]))
    return items


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def run_gen(out, seed=0, views=4, persons=(3, 3), noise_depth=0.0, noise_ids=False,
            monocular=False, width=128, height=96):
    n_cams = 1 if monocular else views
    scene = generate_scene(seed=seed, cameras=n_cams, persons=persons, monocular=monocular,
                           width=width, height=height)
    noise = NoiseSpec(depth_sigma=noise_depth, permute_ids=noise_ids)
    preds, rendered = make_graph_predictions(scene, noise=noise, seed=seed)
    return io.write_bundle(out, preds, scene.n_views, width, height, seed=seed,
                           monocular=monocular, scene=scene, views=rendered)


def run_align(bundle_dir, out, iters=100, tol=1e-8):
    bundle = io.read_bundle(bundle_dir)
    g = bundle.graph
    state = refine_global_alignment(g, init_poses_spanning_tree(g),
                                    RefineOptions(iterations=iters, tolerance=tol))
    cams = extract_cameras(g, state)
    io.write_json(out, io.alignment_to_dict(state, cams))
    return state, cams


def run_fuse(bundle_dir, alignment_path, out_dir, conf_floor=CONF_FLOOR):
    bundle = io.read_bundle(bundle_dir)
    state, _ = io.alignment_from_dict(io.read_json(alignment_path))
    g = bundle.graph
    idmap = resolve_instance_ids(g)
    fused = fuse_views(g, idmap)
    cloud = build_semantic_pointcloud(g, state, idmap, fused, conf_floor)
    os.makedirs(out_dir, exist_ok=True)
    io.write_json(os.path.join(out_dir, "instances.json"), {
        "n_instances": idmap.n_instances,
        "mapping": [{"edge": [int(k[0]), int(k[1])], "slot": int(s), "local": int(l), "global": int(gid)}
                    for (k, s, l), gid in sorted(idmap.mapping.items())],
    })
    for f in fused:
        io.write_array(os.path.join(out_dir, "densepose_%d.harr" % f.view), f.densepose.astype(np.float32))
        io.write_array(os.path.join(out_dir, "weight_%d.harr" % f.view), f.weight.astype(np.float32))
        io.write_array(os.path.join(out_dir, "instance_%d.harr" % f.view), f.instance.astype(np.uint16))
    io.export_ply(cloud, os.path.join(out_dir, "cloud.ply"))
    return cloud


def _body_cloud(template, fits):
    """Fitted surfaces as a point cloud in the PLY dialect (one vertex per body vertex)."""
    parts = []
    for gid, params in fits:
        V = skin_body(template, params)[0]
        n = len(V)
        parts.append(SemanticPointCloud(
            V, np.tile(instance_color(gid), (n, 1)), np.full(n, -1, np.int64),
            np.full((n, 2), -1, np.int64), np.full(n, gid, np.int64),
            template.normalize(template.vertices), np.ones(n, bool), np.ones(n)))
    return SemanticPointCloud.concatenate(parts)


def run_fit(ply_path, out, lambda_theta=1e-6, lambda_beta=1e-5, mesh_out=None):
    cloud = io.cloud_from_ply(io.read_ply(ply_path))
    template = build_template()
    bodies, skipped, fits = [], [], []
    for gid in sorted(set(cloud.instance[cloud.instance > 0].tolist())):
        sel = (cloud.instance == gid) & cloud.has_canonical
        if sel.sum() < MIN_POINTS:
            skipped.append({"instance": gid, "points": int(sel.sum())})
            continue
        try:
            rep = fit_body(cloud.positions[sel], cloud.canonical[sel], cloud.confidence[sel],
                           template, lambda_theta=lambda_theta, lambda_beta=lambda_beta)
        except DataError as exc:
            skipped.append({"instance": gid, "points": int(sel.sum()), "reason": str(exc)})
            continue
        bodies.append({
            "instance": gid,
            "points": int(sel.sum()),
            "params": rep.params.to_dict(),
            "joints": joints_from_params(template, rep.params).tolist(),
            "rmse": float(rep.rmse),
            "converged": bool(rep.converged),
        })
        fits.append((gid, rep.params))
    io.write_json(out, {"bodies": bodies, "skipped": skipped})
    if mesh_out and fits:
        io.export_ply(_body_cloud(template, fits), mesh_out)
    return bodies


def _to_truth_world(truth_cams, pose):
    """Predictions live in view 0's camera frame; anchor them at the true view-0 pose."""
    return truth_cams[0].pose @ pose


def run_eval(bundle_dir, alignment_path, bodies_path=None, out=None, metrics=METRIC_GROUPS):
    bundle = io.read_bundle(bundle_dir)
    if bundle.truth is None:
        raise DataError("bundle carries no ground truth")
    truth = bundle.truth
    state, cams = io.alignment_from_dict(io.read_json(alignment_path))
    gt_cams = truth["cameras"]
    pred_cams = [Camera(_to_truth_world(gt_cams, c.pose), c.focal, c.principal_point, c.width, c.height)
                 for c in cams]
    report = {"scene": {"n_views": bundle.meta["n_views"], "seed": bundle.meta["seed"]}}

    if "human" in metrics:
        bodies = io.read_json(bodies_path)["bodies"] if bodies_path else []
        T0 = gt_cams[0].pose
        pred_j = [T0.apply(np.array(b["joints"])) for b in bodies]
        ids = sorted(truth["joints"])
        gt_j = [truth["joints"][g] for g in ids]
        entry = {"n_true": len(gt_j), "n_predicted": len(pred_j), "n_matched": 0}
        if pred_j and gt_j:
            pi, gi = match_people([p[0] for p in pred_j], [g[0] for g in gt_j])
            r = mpjpe_suite([pred_j[a] for a in pi], [gt_j[b] for b in gi])
            entry.update(n_matched=len(pi), w_mpjpe=r.w_mpjpe, ga_mpjpe=r.ga_mpjpe,
                         pa_mpjpe=r.pa_mpjpe)
        report["human"] = entry

    if "camera" in metrics:
        if len(gt_cams) >= 2:
            report["camera"] = camera_metrics(pred_cams, gt_cams).to_dict()
        else:
            report["camera"] = None

    if "pairwise" in metrics:
        if len(gt_cams) >= 2:
            r = pairwise_pose_metrics(relative_poses(pred_cams), relative_poses(gt_cams))
            report["pairwise"] = {"rra15": r.rra, "rta15": r.rta, "maa30": r.maa}
        else:
            report["pairwise"] = None

    if "depth" in metrics:
        g = bundle.graph
        raw, aligned = [], []
        for v in range(g.n_views):
            if v not in truth["depth"]:
                continue
            key = g.self_edge(v)
            pred = state.sigmas[key] * pointmap_to_depth(g.edges[key].X0)
            gt = truth["depth"][v]
            raw.append(depth_metrics(pred, gt))
            aligned.append(depth_metrics(pred, gt, median_align=True))
        report["depth"] = {
            "rel": float(np.mean([r.rel for r in raw])), "tau": float(np.mean([r.tau for r in raw])),
            "rel_median_aligned": float(np.mean([r.rel for r in aligned])),
            "tau_median_aligned": float(np.mean([r.tau for r in aligned])),
        } if raw else None

    if out:
        io.write_json(out, report)
    return report


def run_pipeline(out_dir, seed=7, views=4, persons=(3, 3), noise_depth=0.0, noise_ids=False,
                 monocular=False, iters=100, tol=1e-8, lambda_theta=1e-6, lambda_beta=1e-5):
    bundle = os.path.join(out_dir, "bundle")
    run_gen(bundle, seed, views, persons, noise_depth, noise_ids, monocular)
    align_path = os.path.join(out_dir, "alignment.json")
    run_align(bundle, align_path, iters, tol)
    fused = os.path.join(out_dir, "fused")
    run_fuse(bundle, align_path, fused)
    bodies = os.path.join(out_dir, "bodies.json")
    run_fit(os.path.join(fused, "cloud.ply"), bodies, lambda_theta, lambda_beta,
            os.path.join(out_dir, "bodies.ply"))
    return run_eval(bundle, align_path, bodies, os.path.join(out_dir, "report.json"))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="hams", description="Multi-view human-aware reconstruction toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def gen_flags(q):
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--views", type=int, default=4)
        q.add_argument("--persons", type=_person_range, default=(3, 3))
        q.add_argument("--noise-depth", type=float, default=0.0)
        q.add_argument("--noise-ids", action="store_true")
        q.add_argument("--monocular", action="store_true")

    q = sub.add_parser("gen", help="generate a synthetic scene bundle")
    gen_flags(q)
    q.add_argument("--out", required=True)

    q = sub.add_parser("align", help="globally align a bundle's pair predictions")
    q.add_argument("bundle")
    q.add_argument("--out", default=None)
    q.add_argument("--iters", type=int, default=100)
    q.add_argument("--tol", type=float, default=1e-8)

    q = sub.add_parser("fuse", help="fuse semantics and export the point cloud")
    q.add_argument("bundle")
    q.add_argument("--alignment", default=None)
    q.add_argument("--out", default=None)
    q.add_argument("--conf-floor", type=float, default=CONF_FLOOR)

    q = sub.add_parser("fit", help="fit bodies to the semantic point cloud")
    q.add_argument("cloud")
    q.add_argument("--out", required=True)
    q.add_argument("--mesh-out", default=None, help="optional PLY of fitted body vertices")
    q.add_argument("--lambda-theta", type=float, default=1e-6)
    q.add_argument("--lambda-beta", type=float, default=1e-5)

    q = sub.add_parser("eval", help="evaluate outputs against the bundle's ground truth")
    q.add_argument("bundle")
    q.add_argument("--alignment", required=True)
    q.add_argument("--bodies", default=None)
    q.add_argument("--out", default=None)
    q.add_argument("--metrics", type=_metric_list, default=list(METRIC_GROUPS))

    q = sub.add_parser("pipeline", help="gen, align, fuse, fit and eval in one go")
    gen_flags(q)
    q.set_defaults(seed=7)
    q.add_argument("--out", default="hams_run")
    q.add_argument("--iters", type=int, default=100)
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--lambda-theta", type=float, default=1e-6)
    q.add_argument("--lambda-beta", type=float, default=1e-5)
    return p


def _validate(args):
    for name in ("views", "iters"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            raise UsageError("--%s must be >= 1" % name)
    if getattr(args, "noise_depth", 0.0) < 0:
        raise UsageError("--noise-depth must be >= 0")
    if getattr(args, "tol", 0.0) < 0:
        raise UsageError("--tol must be >= 0")


def cli_main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: gen, align, fuse, fit, eval, pipeline")
        _validate(args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except SystemExit as exc:          # --help
        return 0 if not exc.code else 1

    try:
        if args.command == "gen":
            run_gen(args.out, args.seed, args.views, args.persons, args.noise_depth,
                    args.noise_ids, args.monocular)
        elif args.command == "align":
            run_align(args.bundle, args.out or os.path.join(args.bundle, "alignment.json"),
                      args.iters, args.tol)
        elif args.command == "fuse":
            run_fuse(args.bundle, args.alignment or os.path.join(args.bundle, "alignment.json"),
                     args.out or os.path.join(args.bundle, "fused"), args.conf_floor)
        elif args.command == "fit":
            run_fit(args.cloud, args.out, args.lambda_theta, args.lambda_beta, args.mesh_out)
        elif args.command == "eval":
            report = run_eval(args.bundle, args.alignment, args.bodies, args.out, args.metrics)
            if not args.out:
                sys.stdout.write(io.dumps_json(report).decode("utf-8"))
        elif args.command == "pipeline":
            report = run_pipeline(args.out, args.seed, args.views, args.persons, args.noise_depth,
                                  args.noise_ids, args.monocular, args.iters, args.tol,
                                  args.lambda_theta, args.lambda_beta)
            sys.stdout.write(io.dumps_json(report).decode("utf-8"))
    except (HamsError, FileNotFoundError, ValueError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(cli_main())
