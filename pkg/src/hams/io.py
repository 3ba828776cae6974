"""Array container, scene bundles, alignment/body JSON and binary PLY."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagic, DataError, DimOverflow, EmptyCloud, TruncatedPayload,
                     UnsupportedDtype, UnsupportedVersion, WriteFailure)

MAGIC = b"HARR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u2"), 3: np.dtype("<u1")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint16): 2, np.dtype(np.uint8): 3}
_U32_MAX = 2 ** 32 - 1


# ---------------------------------------------------------------------------
# array container
# ---------------------------------------------------------------------------

def encode_array(arr):
    a = np.asarray(arr)
    code = _CODES.get(a.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDtype("dtype %s not storable (f32, u16, u8 only)" % a.dtype)
    if a.ndim > 255:
        raise DimOverflow("too many dimensions: %d" % a.ndim)
    if any(d > _U32_MAX for d in a.shape):
        raise DimOverflow("dimension exceeds u32: %s" % (a.shape,))
    head = MAGIC + struct.pack("<BBB", VERSION, code, a.ndim) + struct.pack("<%dI" % a.ndim, *a.shape)
    return head + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def decode_array(buf):
    buf = bytes(buf)
    if len(buf) < 7:
        raise TruncatedPayload("header truncated")
    if buf[:4] != MAGIC:
        raise BadMagic("bad magic %r" % buf[:4])
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise UnsupportedVersion("container version %d" % version)
    if code not in _DTYPES:
        raise UnsupportedDtype("dtype code %d" % code)
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise TruncatedPayload("dims truncated")
    dims = struct.unpack_from("<%dI" % ndim, buf, 7)
    dt = _DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    need = count * dt.itemsize
    if need > 2 ** 62:
        raise DimOverflow("declared size overflows")
    have = len(buf) - off
    if have < need:
        raise TruncatedPayload("payload has %d bytes, dims need %d" % (have, need))
    if have > need:
        raise TruncatedPayload("payload has %d trailing bytes" % (have - need))
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(dims).copy()


def _write_bytes(path, data):
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as exc:
        raise WriteFailure(str(exc)) from exc


def write_array(path, arr):
    _write_bytes(path, encode_array(arr))


def read_array(path):
    with open(path, "rb") as f:
        return decode_array(f.read())


def dumps_json(obj):
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def write_json(path, obj):
    _write_bytes(path, dumps_json(obj))


def read_json(path):
    with open(path, "rb") as f:
        return json.loads(f.read().decode("utf-8"))


# ---------------------------------------------------------------------------
# scene bundle
# ---------------------------------------------------------------------------

_PAIR_FIELDS = (
    ("X0", np.float32), ("X1", np.float32), ("C0", np.float32), ("C1", np.float32),
    ("inst0", np.uint16), ("inst1", np.uint16), ("dp0", np.float32), ("dp1", np.float32),
    ("dpmask0", np.uint8), ("dpmask1", np.uint8),
)


def pair_dirname(i, j):
    return "p_%d_%d" % (i, j)


@dataclass
class Bundle:
    meta: dict
    graph: object
    truth: dict = None


def _camera_to_dict(cam):
    return {
        "quaternion": [float(x) for x in cam.pose.quaternion],
        "translation": [float(x) for x in cam.pose.translation],
        "focal": float(cam.focal),
        "principal_point": [float(x) for x in cam.principal_point],
        "width": int(cam.width),
        "height": int(cam.height),
    }


def _camera_from_dict(d):
    from .geometry import Camera, Sim3
    pose = Sim3.from_quat(np.array(d["quaternion"]), np.array(d["translation"]))
    return Camera(pose, float(d["focal"]), np.array(d["principal_point"], dtype=float),
                  int(d["width"]), int(d["height"]))


def write_bundle(root, preds, n_views, width, height, seed=0, monocular=False,
                 scene=None, views=None):
    """Write pair predictions (and, given ``scene``, its ground truth) as a bundle."""
    os.makedirs(os.path.join(root, "pairs"), exist_ok=True)
    preds = sorted(preds, key=lambda p: p.key)
    ddim = 0
    for p in preds:
        d = os.path.join(root, "pairs", pair_dirname(p.i, p.j))
        os.makedirs(d, exist_ok=True)
        for name, dt in _PAIR_FIELDS:
            write_array(os.path.join(d, name + ".harr"), np.asarray(getattr(p, name)).astype(dt))
        write_array(os.path.join(d, "sil0.harr"), p.sil0.astype(np.uint8))
        write_array(os.path.join(d, "sil1.harr"), p.sil1.astype(np.uint8))
        if p.D0 is not None:
            ddim = p.D0.shape[-1]
            write_array(os.path.join(d, "D0.harr"), p.D0.astype(np.float32))
            write_array(os.path.join(d, "D1.harr"), p.D1.astype(np.float32))
    meta = {
        "format": "hams-bundle",
        "version": 1,
        "n_views": int(n_views),
        "width": int(width),
        "height": int(height),
        "pairs": [[int(p.i), int(p.j)] for p in preds],
        "descriptor_dim": int(ddim),
        "seed": int(seed),
        "monocular": bool(monocular),
        "truth": "truth" if scene is not None else None,
    }
    write_json(os.path.join(root, "scene.json"), meta)
    if scene is not None:
        write_truth(os.path.join(root, "truth"), scene, views)
    return meta


def write_truth(root, scene, views=None):
    from .body import build_template, joints_from_params
    from .oracle import render_all
    os.makedirs(root, exist_ok=True)
    template = build_template()
    write_json(os.path.join(root, "cameras.json"),
               {"cameras": [_camera_to_dict(c) for c in scene.cameras]})
    people = []
    for params, gid in scene.people:
        write_array(os.path.join(root, "joints_%d.harr" % gid),
                    joints_from_params(template, params).astype(np.float32))
        people.append({"instance": int(gid), "params": params.to_dict()})
    write_json(os.path.join(root, "people.json"), {"people": people})
    views = views if views is not None else render_all(scene)
    for v in views:
        write_array(os.path.join(root, "depth_%d.harr" % v.camera_index), v.depth.astype(np.float32))


def read_truth(root):
    cams = [_camera_from_dict(d) for d in read_json(os.path.join(root, "cameras.json"))["cameras"]]
    people = read_json(os.path.join(root, "people.json"))["people"]
    joints = {p["instance"]: read_array(os.path.join(root, "joints_%d.harr" % p["instance"])).astype(float)
              for p in people}
    depth = {}
    for v in range(len(cams)):
        path = os.path.join(root, "depth_%d.harr" % v)
        if os.path.exists(path):
            depth[v] = read_array(path).astype(float)
    return {"cameras": cams, "people": people, "joints": joints, "depth": depth}


def read_bundle(root):
    from .alignment import PairGraph
    from .oracle import PairPrediction
    path = os.path.join(root, "scene.json")
    if not os.path.exists(path):
        raise DataError("no scene.json in %s" % root)
    meta = read_json(path)
    if meta.get("format") != "hams-bundle":
        raise DataError("not a scene bundle")
    H, W = meta["height"], meta["width"]
    preds = []
    for i, j in meta["pairs"]:
        d = os.path.join(root, "pairs", pair_dirname(i, j))
        if not os.path.isdir(d):
            raise DataError("missing pair directory %s" % d)
        f = {}
        for name, _ in _PAIR_FIELDS:
            f[name] = read_array(os.path.join(d, name + ".harr"))
        for name in ("D0", "D1"):
            p = os.path.join(d, name + ".harr")
            f[name] = read_array(p).astype(float) if os.path.exists(p) else None
        for k in ("X0", "X1", "C0", "C1", "dp0", "dp1"):
            f[k] = f[k].astype(float)
        for k in ("inst0", "inst1"):
            f[k] = f[k].astype(np.int64)
        for k in ("dpmask0", "dpmask1"):
            f[k] = f[k].astype(bool)
        if f["X0"].shape != (H, W, 3) or f["X1"].shape != (H, W, 3):
            raise DataError("pair %s has inconsistent shape" % ((i, j),))
        if min(f["C0"].min(initial=1), f["C1"].min(initial=1)) < 1:
            raise DataError("confidence below 1 in pair %s" % ((i, j),))
        preds.append(PairPrediction(i, j, **f))
    graph = PairGraph(meta["n_views"], preds)
    truth = None
    if meta.get("truth"):
        truth = read_truth(os.path.join(root, meta["truth"]))
    return Bundle(meta, graph, truth)


# ---------------------------------------------------------------------------
# alignment / bodies JSON
# ---------------------------------------------------------------------------

def alignment_to_dict(state, cameras=None):
    out = {
        "poses": [{"quaternion": [float(x) for x in p.quaternion],
                   "translation": [float(x) for x in p.translation],
                   "scale": float(p.scale)} for p in state.poses],
        "edges": [{"edge": [int(k[0]), int(k[1])], "sigma": float(state.sigmas[k])}
                  for k in sorted(state.sigmas)],
        "reference_edge": [int(x) for x in state.reference_edge],
        "energy": float(state.energy),
        "energy_trace": [float(e) for e in state.energy_trace],
    }
    if cameras is not None:
        out["cameras"] = [_camera_to_dict(c) for c in cameras]
    return out


def alignment_from_dict(d):
    from .alignment import AlignmentState
    from .geometry import Sim3
    poses = [Sim3.from_quat(np.array(p["quaternion"]), np.array(p["translation"]), p["scale"])
             for p in d["poses"]]
    sigmas = {tuple(e["edge"]): float(e["sigma"]) for e in d["edges"]}
    state = AlignmentState(poses, sigmas, tuple(d["reference_edge"]), d["energy"],
                           list(d["energy_trace"]))
    cams = [_camera_from_dict(c) for c in d.get("cameras", [])]
    return state, cams


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

PLY_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("instance", "<u2"),
    ("dpx", "<f4"), ("dpy", "<f4"), ("dpz", "<f4"),
    ("confidence", "<f4"),
])
_PLY_TYPES = {"float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
              "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
              "ushort": "u2", "uint16": "u2", "short": "i2", "int16": "i2",
              "uint": "u4", "uint32": "u4", "int": "i4", "int32": "i4"}
_PLY_NAMES = {"f4": "float", "u1": "uchar", "u2": "ushort"}


def encode_ply(cloud):
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("cloud has no points")
    rec = np.zeros(n, dtype=PLY_DTYPE)
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    if cloud.instance.max(initial=0) > 65535:
        raise DataError("instance id exceeds ushort")
    rec["instance"] = cloud.instance
    dp = np.where(cloud.has_canonical[:, None], cloud.canonical, -1.0)
    rec["dpx"], rec["dpy"], rec["dpz"] = dp.T
    rec["confidence"] = cloud.confidence
    lines = ["ply", "format binary_little_endian 1.0", "element vertex %d" % n]
    for name in PLY_DTYPE.names:
        lines.append("property %s %s" % (_PLY_NAMES[PLY_DTYPE[name].str[1:]], name))
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii") + rec.tobytes()


def export_ply(cloud, path):
    _write_bytes(path, encode_ply(cloud))


def decode_ply(buf):
    """Parse a binary little-endian vertex-only PLY into a structured array."""
    buf = bytes(buf)
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n") or end < 0:
        raise BadMagic("not a PLY file")
    header = buf[:end].decode("ascii").splitlines()
    n, fields, in_vertex = None, [], False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise UnsupportedVersion("PLY format %s" % parts[1])
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n = int(parts[2])
            elif int(parts[2]) > 0:
                raise DataError("only vertex elements are supported")
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise DataError("list properties are not supported")
            fields.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if n is None:
        raise DataError("PLY has no vertex element")
    dt = np.dtype(fields)
    body = buf[end + len(b"end_header\n"):]
    if len(body) < n * dt.itemsize:
        raise TruncatedPayload("PLY payload truncated")
    return np.frombuffer(body, dtype=dt, count=n).copy()


def read_ply(path):
    with open(path, "rb") as f:
        return decode_ply(f.read())


def cloud_from_ply(rec):
    """Semantic cloud fields recoverable from a PLY record array."""
    from .fusion import SemanticPointCloud
    n = len(rec)
    dp = np.stack([rec["dpx"], rec["dpy"], rec["dpz"]], axis=1).astype(float)
    has = np.all(dp >= 0, axis=1)
    return SemanticPointCloud(
        np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float),
        np.stack([rec["red"], rec["green"], rec["blue"]], axis=1),
        np.full(n, -1, np.int64), np.full((n, 2), -1, np.int64),
        rec["instance"].astype(np.int64), np.where(has[:, None], dp, 0.0), has,
        rec["confidence"].astype(float))
