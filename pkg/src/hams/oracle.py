"""Procedural synthetic scenes standing in for the trained two-view network.

A scene is a closed box room with SMPL-lite people standing on the floor and
a ring of inward-looking cameras.  Views are ray cast on the CPU.  Each
person is rendered twice: an inflated shell (clothing and hair, defines the
silhouette and the visible geometry) and the bare body (defines where the
body-surface mapping is valid and supplies canonical template coordinates).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .body import BodyParams, build_template, sample_params, skin_body, vertex_normals
from .errors import ConfigInvalid, IndexOutOfRange
from .geometry import Camera, Sim3, image_center, so3_exp
from .parallel import ordered_map

BASE_CONFIDENCE = 5.0
OUTLIER_CONFIDENCE = 1.0


@dataclass(frozen=True)
class Rect:
    """Planar rectangle: center, two half-extent edge vectors, RGB color."""
    center: np.ndarray
    half_u: np.ndarray
    half_v: np.ndarray
    color: tuple

    @property
    def normal(self):
        n = np.cross(self.half_u, self.half_v)
        return n / np.linalg.norm(n)

    def transformed(self, T: Sim3):
        R = T.scale * T.rotation
        return Rect(T.apply(self.center), R @ self.half_u, R @ self.half_v, self.color)


@dataclass
class SceneConfig:
    room_width: tuple = (4.5, 6.0)
    room_depth: tuple = (4.5, 6.0)
    room_height: tuple = (2.6, 3.0)
    persons: tuple = (4, 6)
    cameras: int = 4
    width: int = 128
    height: int = 96
    hfov_deg: float = 70.0
    focal_jitter: float = 0.1
    person_radius: float = 1.2
    min_separation: float = 0.75
    pose_scale: float = 1.0
    silhouette_margin: float = 0.015
    monocular: bool = False


@dataclass
class SceneTruth:
    room: list
    people: list            # [(BodyParams, global id)]
    cameras: list
    config: SceneConfig
    seed: int
    world: Sim3 = field(default_factory=Sim3)

    def content_hash(self):
        h = hashlib.sha256()
        for r in self.room:
            for a in (r.center, r.half_u, r.half_v):
                h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        for p, gid in self.people:
            h.update(str(gid).encode())
            for a in (p.betas, p.pose, p.root.matrix()):
                h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        for c in self.cameras:
            h.update(np.ascontiguousarray(c.pose.matrix()).tobytes())
            h.update(np.array([c.focal, *c.principal_point]).tobytes())
        return h.hexdigest()

    @property
    def n_views(self):
        return len(self.cameras)

    def transformed(self, T: Sim3):
        """Same scene under a global rigid motion of everything."""
        if abs(T.scale - 1) > 1e-12:
            raise ValueError("only rigid motions preserve the metric scene")
        people = [(BodyParams(p.betas, p.pose, T @ p.root), g) for p, g in self.people]
        cams = [Camera(T @ c.pose, c.focal, c.principal_point, c.width, c.height) for c in self.cameras]
        return SceneTruth([r.transformed(T) for r in self.room], people, cams, self.config,
                          self.seed, T @ self.world)


def _check_range(name, rng_):
    lo, hi = rng_
    if hi < lo:
        raise ConfigInvalid("empty range for %s: %r" % (name, rng_))


def _look_at(center, target, roll, rng):
    fwd = target - center
    fwd /= np.linalg.norm(fwd)
    world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, world_up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    return R @ so3_exp(np.array([0, 0, roll]))


def generate_scene(config=None, seed=0, **overrides):
    cfg = config or SceneConfig()
    if overrides:
        cfg = SceneConfig(**{**cfg.__dict__, **overrides})
    for name in ("room_width", "room_depth", "room_height", "persons"):
        _check_range(name, getattr(cfg, name))
    if cfg.persons[0] < 0:
        raise ConfigInvalid("person count must be >= 0")
    min_cams = 1 if cfg.monocular else 2
    if cfg.cameras < min_cams:
        raise ConfigInvalid("need >= %d cameras (monocular=%s)" % (min_cams, cfg.monocular))
    if cfg.width < 8 or cfg.height < 8:
        raise ConfigInvalid("image too small")

    rng = np.random.default_rng(seed)
    template = build_template()
    W = rng.uniform(*cfg.room_width)
    D = rng.uniform(*cfg.room_depth)
    Hh = rng.uniform(*cfg.room_height)
    room = _make_room(W, D, Hh, rng)

    n_people = int(rng.integers(cfg.persons[0], cfg.persons[1] + 1))
    radius = min(cfg.person_radius, min(W, D) / 2 - 0.6)
    positions = []
    tries = 0
    while len(positions) < n_people:
        tries += 1
        if tries > 10000:
            raise ConfigInvalid("cannot place %d people in the room" % n_people)
        r = radius * np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        p = np.array([r * np.cos(a), r * np.sin(a)])
        if all(np.linalg.norm(p - q) >= cfg.min_separation for q in positions):
            positions.append(p)

    people = []
    for k, (x, z) in enumerate(positions):
        params = sample_params(rng, template, pose_scale=cfg.pose_scale)
        s = rng.uniform(0.85, 0.95)
        R = so3_exp(np.array([0.0, rng.uniform(0, 2 * np.pi), 0.0]))
        params.root = Sim3(s, R, np.zeros(3))
        verts, _ = skin_body(template, params)
        params.root = Sim3(s, R, np.array([x, -verts[:, 1].min() + 0.002, z]))
        people.append((params, k + 1))

    cams = []
    ring = min(W, D) / 2 - 0.45
    f0 = (cfg.width / 2) / np.tan(np.radians(cfg.hfov_deg) / 2)
    start = rng.uniform(0, 2 * np.pi)
    for c in range(cfg.cameras):
        a = start + 2 * np.pi * c / cfg.cameras + rng.uniform(-0.15, 0.15)
        center = np.array([ring * np.cos(a), rng.uniform(1.4, 1.9), ring * np.sin(a)])
        target = np.array([0, 0.8, 0]) + rng.uniform(-0.25, 0.25, 3)
        R = _look_at(center, target, rng.uniform(-0.05, 0.05), rng)
        f = f0 * (1 + rng.uniform(-cfg.focal_jitter, cfg.focal_jitter))
        cams.append(Camera(Sim3(1.0, R, center), f, image_center(cfg.width, cfg.height),
                           cfg.width, cfg.height))
    return SceneTruth(room, people, cams, cfg, seed)


def _make_room(W, D, H, rng):
    pal = rng.uniform(90, 230, (6, 3)).astype(int)
    x, z = W / 2, D / 2
    return [
        Rect(np.array([0, 0, 0.0]), np.array([x, 0, 0]), np.array([0, 0, z]), tuple(pal[0])),   # floor
        Rect(np.array([0, H, 0.0]), np.array([x, 0, 0]), np.array([0, 0, -z]), tuple(pal[1])),  # ceiling
        Rect(np.array([-x, H / 2, 0]), np.array([0, 0, z]), np.array([0, H / 2, 0]), tuple(pal[2])),
        Rect(np.array([x, H / 2, 0]), np.array([0, 0, -z]), np.array([0, H / 2, 0]), tuple(pal[3])),
        Rect(np.array([0, H / 2, -z]), np.array([x, 0, 0]), np.array([0, H / 2, 0]), tuple(pal[4])),
        Rect(np.array([0, H / 2, z]), np.array([-x, 0, 0]), np.array([0, H / 2, 0]), tuple(pal[5])),
    ]


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def _intersect_rects(origin, dirs, rects):
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1)
    best_uv = np.zeros((n, 2))
    for k, r in enumerate(rects):
        nrm = r.normal
        denom = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((r.center - origin) @ nrm) / denom
        hit = origin + t[:, None] * dirs - r.center
        lu = hit @ r.half_u / (r.half_u @ r.half_u)
        lv = hit @ r.half_v / (r.half_v @ r.half_v)
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (np.abs(lu) <= 1 + 1e-9) & (np.abs(lv) <= 1 + 1e-9)
        better = ok & (t < best_t)
        best_t[better] = t[better]
        best_id[better] = k
        best_uv[better] = np.stack([lu, lv], axis=1)[better]
    return best_t, best_id, best_uv


def _intersect_mesh(origin, dirs, tri_pts, chunk=1024):
    """Möller-Trumbore; returns nearest t, triangle index and barycentrics (b1, b2)."""
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1)
    best_b = np.zeros((n, 2))
    if n == 0:
        return best_t, best_f, best_b
    v0 = tri_pts[:, 0]
    e1 = tri_pts[:, 1] - v0
    e2 = tri_pts[:, 2] - v0
    s = origin - v0                                        # (F, 3)
    q = np.cross(s, e1)                                    # (F, 3)
    sq_e2 = np.einsum("fc,fc->f", q, e2)
    for lo in range(0, n, chunk):
        d = dirs[lo:lo + chunk]
        p = np.cross(d[:, None, :], e2[None])              # (R, F, 3)
        det = np.einsum("rfc,fc->rf", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = np.einsum("rfc,fc->rf", p, s) * inv
            v = (d @ q.T) * inv
            t = sq_e2[None] * inv
        ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        t = np.where(ok, t, np.inf)
        f = np.argmin(t, axis=1)
        rows = np.arange(len(d))
        tb = t[rows, f]
        hit = np.isfinite(tb)
        idx = lo + rows[hit]
        best_t[idx] = tb[hit]
        best_f[idx] = f[hit]
        best_b[idx] = np.stack([u[rows, f], v[rows, f]], axis=1)[hit]
    return best_t, best_f, best_b


def _intersect_mesh_projected(cam, origin, dirs, tri_pts):
    """Exact ray casting restricted to pixels inside each triangle's projected box.

    Same result as brute force over all pixels, at a fraction of the cost.
    Triangles reaching behind the camera fall back to brute force.
    """
    H, W = cam.height, cam.width
    n = H * W
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1)
    best_b = np.zeros((n, 2))
    F = len(tri_pts)
    uv, z = cam.project(tri_pts.reshape(-1, 3))
    uv = uv.reshape(F, 3, 2)
    z = z.reshape(F, 3)
    front = np.all(z > 1e-3, axis=1)
    behind = np.flatnonzero(~front)
    if len(behind):
        t, f, b = _intersect_mesh(origin, dirs, tri_pts[behind])
        hit = np.isfinite(t)
        best_t[hit], best_f[hit], best_b[hit] = t[hit], behind[f[hit]], b[hit]
    fi = np.flatnonzero(front)
    if len(fi):
        lo = np.floor(uv[fi].min(axis=1)).astype(np.int64) - 1
        hi = np.ceil(uv[fi].max(axis=1)).astype(np.int64) + 1
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, [W - 1, H - 1])
        w = np.maximum(hi[:, 0] - lo[:, 0] + 1, 0)
        h = np.maximum(hi[:, 1] - lo[:, 1] + 1, 0)
        counts = w * h
        total = int(counts.sum())
        if total:
            tri = np.repeat(np.arange(len(fi)), counts)
            starts = np.repeat(np.cumsum(counts) - counts, counts)
            off = np.arange(total) - starts
            pu = lo[tri, 0] + off % w[tri]
            pv = lo[tri, 1] + off // w[tri]
            pix = pv * W + pu
            faces = fi[tri]
            v0 = tri_pts[faces, 0]
            e1 = tri_pts[faces, 1] - v0
            e2 = tri_pts[faces, 2] - v0
            d = dirs[pix]
            p = np.cross(d, e2)
            det = np.einsum("nc,nc->n", p, e1)
            s = origin - v0
            q = np.cross(s, e1)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                u = np.einsum("nc,nc->n", p, s) * inv
                v = np.einsum("nc,nc->n", d, q) * inv
                t = np.einsum("nc,nc->n", e2, q) * inv
            ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
            ok = np.flatnonzero(ok)
            if len(ok):
                order = np.lexsort((faces[ok], t[ok], pix[ok]))
                ok = ok[order]
                first = np.ones(len(ok), dtype=bool)
                first[1:] = pix[ok][1:] != pix[ok][:-1]
                ok = ok[first]
                better = t[ok] < best_t[pix[ok]]
                ok = ok[better]
                best_t[pix[ok]] = t[ok]
                best_f[pix[ok]] = faces[ok]
                best_b[pix[ok]] = np.stack([u[ok], v[ok]], axis=1)
    return best_t, best_f, best_b


@dataclass
class ViewTruth:
    camera_index: int
    pointmap: np.ndarray      # (H, W, 3) camera frame
    depth: np.ndarray         # (H, W)
    instance: np.ndarray      # (H, W) int, 0 background, else global id
    densepose: np.ndarray     # (H, W, 3) canonical coordinate in [0,1]^3
    valid: np.ndarray         # (H, W) bool, bare-body (SMPL-region) mask
    color: np.ndarray         # (H, W, 3) uint8
    normal_cos: np.ndarray    # (H, W) |cos| between ray and surface normal
    world_points: np.ndarray  # (H, W, 3)
    _desc_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def descriptors(self, dim, seed):
        key = (dim, seed)
        if key not in self._desc_cache:
            self._desc_cache[key] = descriptor_field(self.world_points, dim, seed=seed)
        return self._desc_cache[key]

    @property
    def silhouette(self):
        return self.instance > 0

    def person_mask(self, gid):
        return self.instance == gid


def _posed_meshes(scene, margin):
    template = build_template()
    out = []
    for params, gid in scene.people:
        v, _ = skin_body(template, params)
        shell = v + margin * vertex_normals(v, template.triangles) if margin > 0 else v
        out.append((gid, v, shell))
    return template, out


def render_view(scene, camera_index, margin=None):
    if not 0 <= camera_index < scene.n_views:
        raise IndexOutOfRange("camera index %d out of range" % camera_index)
    cam = scene.cameras[camera_index]
    margin = scene.config.silhouette_margin if margin is None else margin
    template, meshes = _posed_meshes(scene, margin)
    return _render(scene, cam, camera_index, template, meshes)


def _render(scene, cam, camera_index, template, meshes):
    H, W = cam.height, cam.width
    d_cam = cam.pixel_rays()
    R = cam.pose.rotation
    origin = cam.center
    dirs = (d_cam.reshape(-1, 3) @ R.T)
    n = H * W

    t_room, rid, ruv = _intersect_rects(origin, dirs, scene.room)
    depth = t_room.copy()
    inst = np.zeros(n, dtype=np.int64)
    normal_w = np.zeros((n, 3))
    color = np.zeros((n, 3))
    for k, r in enumerate(scene.room):
        m = rid == k
        normal_w[m] = r.normal
        checker = ((np.floor(ruv[m, 0] * 6) + np.floor(ruv[m, 1] * 6)) % 2)[:, None]
        color[m] = np.array(r.color) * (0.8 + 0.2 * checker)

    body_t = np.full(n, np.inf)
    body_gid = np.zeros(n, dtype=np.int64)
    body_f = np.full(n, -1)
    body_b = np.zeros((n, 2))
    tris = template.triangles
    for gid, verts, shell in meshes:
        ts, fs, _ = _intersect_mesh_projected(cam, origin, dirs, shell[tris])
        closer = ts < depth
        sel = np.flatnonzero(closer)
        depth[sel] = ts[closer]
        inst[sel] = gid
        tp = shell[tris[fs[closer]]]
        fn = np.cross(tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0])
        normal_w[sel] = fn / np.linalg.norm(fn, axis=1, keepdims=True)
        color[sel] = _person_color(gid)
        tb, fb, bb = _intersect_mesh_projected(cam, origin, dirs, verts[tris])
        closer = tb < body_t
        sel = np.flatnonzero(closer)
        body_t[sel] = tb[closer]
        body_gid[sel] = gid
        body_f[sel] = fb[closer]
        body_b[sel] = bb[closer]

    valid = (inst > 0) & (body_gid == inst) & (body_t < t_room)
    dp = np.zeros((n, 3))
    if valid.any():
        f = tris[body_f[valid]]
        b = body_b[valid]
        canon = ((1 - b[:, :1] - b[:, 1:]) * template.vertices[f[:, 0]]
                 + b[:, :1] * template.vertices[f[:, 1]] + b[:, 1:] * template.vertices[f[:, 2]])
        dp[valid] = np.clip(template.normalize(canon), 0.0, 1.0)

    depth = depth.reshape(H, W)
    pointmap = depth[..., None] * d_cam
    world = cam.pose.apply(pointmap)
    cosn = np.abs(np.einsum("nc,nc->n", normal_w, dirs / np.linalg.norm(dirs, axis=1, keepdims=True)))
    return ViewTruth(camera_index, pointmap, depth, inst.reshape(H, W), dp.reshape(H, W, 3),
                     valid.reshape(H, W), np.clip(color, 0, 255).astype(np.uint8).reshape(H, W, 3),
                     cosn.reshape(H, W), world)


_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
])


def _person_color(gid):
    return _PALETTE[(gid - 1) % len(_PALETTE)]


def person_color(gid):
    return _person_color(gid) if gid > 0 else np.array([128, 128, 128])


def render_all(scene, margin=None):
    template, meshes = _posed_meshes(scene, scene.config.silhouette_margin if margin is None else margin)
    return ordered_map(lambda c: _render(scene, scene.cameras[c], c, template, meshes),
                       range(scene.n_views))


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------



def descriptor_frequencies(dim=16, max_extent=12.0, seed=0):
    """Random 3D frequencies, all short enough that no phase wraps within ``max_extent``."""
    if dim < 2 or dim % 2:
        raise ValueError("descriptor dimension must be even and >= 2")
    rng = np.random.default_rng([seed, 104729])
    dirs = rng.normal(size=(dim // 2, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = np.pi / max_extent * rng.uniform(0.5, 1.0, size=dim // 2)
    return dirs * mags[:, None]


def descriptor_field(points, dim=16, max_extent=12.0, seed=0):
    """Unit descriptors that are a smooth function of world position.

    Codes are paired cosines and sines of random projections, so the dot
    product of two codes is the mean of ``cos(w_k . (x - y))``.  With every
    ``|w_k| * max_extent < pi`` it peaks at 1 only when ``x == y``, which
    makes the true correspondence the unique best match.
    """
    P = np.asarray(points, dtype=float)
    W = descriptor_frequencies(dim, max_extent, seed)
    phase = P.reshape(-1, 3) @ W.T
    out = np.concatenate([np.cos(phase), np.sin(phase)], axis=1) / np.sqrt(dim // 2)
    return out.reshape(P.shape[:-1] + (dim,))


# ---------------------------------------------------------------------------
# pair predictions
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    depth_sigma: float = 0.0
    confidence_corruption: float = 0.0
    densepose_sigma: float = 0.0
    mask_pixels: int = 0
    permute_ids: bool = False

    def __post_init__(self):
        if not 0 <= self.confidence_corruption <= 1:
            raise ConfigInvalid("corruption rate must lie in [0, 1]")
        if self.depth_sigma < 0 or self.densepose_sigma < 0:
            raise ConfigInvalid("noise sigmas must be >= 0")


@dataclass
class PairPrediction:
    i: int
    j: int
    X0: np.ndarray
    X1: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    inst0: np.ndarray
    inst1: np.ndarray
    dp0: np.ndarray
    dp1: np.ndarray
    dpmask0: np.ndarray
    dpmask1: np.ndarray
    D0: np.ndarray = None
    D1: np.ndarray = None
    local_to_global: dict = field(default_factory=dict)   # oracle-only metadata

    @property
    def key(self):
        return (self.i, self.j)

    @property
    def frame(self):
        return self.i

    @property
    def sil0(self):
        return self.inst0 > 0

    @property
    def sil1(self):
        return self.inst1 > 0

    def slot(self, k):
        """(pointmap, confidence, instance, densepose, dp-valid) of slot 0 or 1."""
        if k == 0:
            return self.X0, self.C0, self.inst0, self.dp0, self.dpmask0
        return self.X1, self.C1, self.inst1, self.dp1, self.dpmask1

    def view(self, k):
        return self.i if k == 0 else self.j


def _edit_masks(inst, pixels):
    """Dilate (pixels > 0) into background or erode (pixels < 0) each instance."""
    if pixels == 0:
        return inst
    out = inst.copy()
    ids = [g for g in np.unique(inst) if g > 0]
    if pixels > 0:
        for g in ids:
            grown = ndimage.binary_dilation(inst == g, iterations=pixels)
            out[grown & (out == 0)] = g
    else:
        for g in ids:
            keep = ndimage.binary_erosion(inst == g, iterations=-pixels)
            out[(inst == g) & ~keep] = 0
    return out


def _noisy_self(view, noise, rng):
    P = view.pointmap.copy()
    z = view.depth
    conf = 1.0 + (BASE_CONFIDENCE - 1.0) * np.maximum(view.normal_cos, 0.2)
    if noise.depth_sigma > 0:
        P += noise.depth_sigma * z[..., None] * rng.standard_normal(P.shape)
    if noise.confidence_corruption > 0:
        bad = rng.uniform(size=z.shape) < noise.confidence_corruption
        P[bad] += 0.2 * z[bad][:, None] * rng.standard_normal((int(bad.sum()), 3))
        conf[bad] = OUTLIER_CONFIDENCE
    dp = view.densepose.copy()
    valid = view.valid.copy()
    if noise.densepose_sigma > 0:
        dp = np.clip(dp + noise.densepose_sigma * rng.standard_normal(dp.shape), 0, 1)
    dp[~valid] = 0
    return P, conf, dp, valid


def make_pair_prediction(scene, i, j, noise=None, seed=0, views=None, descriptor_dim=16):
    """What the two-view network would output for the ordered pair (i, j)."""
    n = scene.n_views
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange("pair (%d, %d) out of range for %d views" % (i, j, n))
    if i == j and not scene.config.monocular:
        raise IndexOutOfRange("i == j only allowed in monocular mode")
    noise = noise or NoiseSpec()
    vi = views[i] if views is not None else render_view(scene, i)
    vj = vi if i == j else (views[j] if views is not None else render_view(scene, j))
    rng = np.random.default_rng([seed, i, j, 7919])

    P0, C0, dp0, m0 = _noisy_self(vi, noise, rng)
    if i == j:
        P1, C1, dp1, m1 = P0.copy(), C0.copy(), dp0.copy(), m0.copy()
    else:
        Pj, C1, dp1, m1 = _noisy_self(vj, noise, rng)
        rel = scene.cameras[i].pose.inverse() @ scene.cameras[j].pose
        P1 = rel.apply(Pj)

    inst0 = _edit_masks(vi.instance, noise.mask_pixels)
    inst1 = inst0.copy() if i == j else _edit_masks(vj.instance, noise.mask_pixels)
    gids = sorted((set(np.unique(inst0).tolist()) | set(np.unique(inst1).tolist())) - {0})
    local = np.arange(1, len(gids) + 1)
    if noise.permute_ids and len(gids) > 1:
        local = rng.permutation(local)
    g2l = {int(g): int(l) for g, l in zip(gids, local)}
    lut = np.zeros(max([0] + gids) + 1, dtype=np.int64)
    for g, l in g2l.items():
        lut[g] = l

    D0 = D1 = None
    if descriptor_dim:
        D0 = vi.descriptors(descriptor_dim, scene.seed).copy()
        D1 = vj.descriptors(descriptor_dim, scene.seed).copy()

    return PairPrediction(
        i, j, P0, P1, C0, C1,
        lut[inst0].astype(np.uint16), lut[inst1].astype(np.uint16),
        dp0, dp1, m0 & (inst0 > 0), m1 & (inst1 > 0), D0, D1,
        {l: g for g, l in g2l.items()},
    )


def all_pairs(n_views, monocular=False):
    if n_views == 1 and monocular:
        return [(0, 0)]
    return [(i, j) for i in range(n_views) for j in range(n_views) if i != j]


def make_graph_predictions(scene, noise=None, seed=0, pairs=None, descriptor_dim=16, views=None):
    views = views or render_all(scene)
    pairs = pairs or all_pairs(scene.n_views, scene.config.monocular)
    return ordered_map(
        lambda ij: make_pair_prediction(scene, ij[0], ij[1], noise, seed, views, descriptor_dim),
        pairs), views
