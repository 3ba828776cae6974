"""SMPL-lite: a small procedural skinned body model.

The template is a set of elliptic tubes, one per joint, hung on a 16-joint
skeleton in a relaxed A-pose (y up, facing +z, pelvis at the origin, metres).
Shape blendshapes are defined on the skeleton and inherited by the tube
vertices, so the joint regressor reproduces the shaped skeleton exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import Sim3, so3_exp

JOINT_NAMES = (
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
PARENTS = np.array([-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14])
N_JOINTS = 16
N_BETAS = 4
BETA_NAMES = ("height", "girth", "limb_length", "torso_limb_ratio")
BETA_LIMIT = 5.0

# per-joint sampling range (rad) and hard angle limit used during fitting
POSE_SAMPLE_STD = np.array([0.0, 0.15, 0.2, 0.25, 0.3, 0.45, 0.35, 0.3, 0.45, 0.35,
                            0.3, 0.45, 0.25, 0.3, 0.45, 0.25])
JOINT_ANGLE_LIMIT = np.full(N_JOINTS, 2.5)


def _a_pose_sites():
    """Skeleton joints plus five end sites (head top, hand tips, toes)."""
    def arm(side):
        sh = np.array([0.18 * side, 0.47, 0.0])
        d = np.array([np.cos(np.radians(40)) * side, -np.sin(np.radians(40)), 0.0])
        return sh, sh + 0.28 * d, sh + 0.53 * d, sh + 0.68 * d

    def leg(side):
        hip = np.array([0.09 * side, -0.06, 0.0])
        knee = np.array([0.10 * side, -0.47, 0.01])
        ankle = np.array([0.10 * side, -0.87, -0.01])
        toe = ankle + np.array([0.0, -0.04, 0.16])
        return hip, knee, ankle, toe

    lsh, lel, lwr, ltip = arm(1)
    rsh, rel, rwr, rtip = arm(-1)
    lhip, lkn, lan, ltoe = leg(1)
    rhip, rkn, ran, rtoe = leg(-1)
    joints = np.array([
        [0, 0, 0], [0, 0.24, 0], [0, 0.52, 0], [0, 0.63, 0],
        lsh, lel, lwr, rsh, rel, rwr, lhip, lkn, lan, rhip, rkn, ran,
    ], dtype=float)
    ends = np.array([[0, 0.86, 0], ltip, rtip, ltoe, rtoe], dtype=float)
    return np.vstack([joints, ends])


# segment owned by each joint: (end site index, radius_x, radius_z, rings)
_SEGMENTS = {
    0: (1, 0.14, 0.10, 4), 1: (2, 0.16, 0.11, 4), 2: (3, 0.055, 0.055, 2), 3: (16, 0.10, 0.11, 4),
    4: (5, 0.055, 0.055, 3), 5: (6, 0.045, 0.045, 3), 6: (17, 0.04, 0.025, 3),
    7: (8, 0.055, 0.055, 3), 8: (9, 0.045, 0.045, 3), 9: (18, 0.04, 0.025, 3),
    10: (11, 0.075, 0.075, 3), 11: (12, 0.055, 0.055, 3), 12: (19, 0.045, 0.035, 3),
    13: (14, 0.075, 0.075, 3), 14: (15, 0.055, 0.055, 3), 15: (20, 0.045, 0.035, 3),
}
_AROUND = 8
_ARM_SITES = {1: (5, 6, 17), -1: (8, 9, 18)}
_LEG_SITES = {1: (11, 12, 19), -1: (14, 15, 20)}
_SHOULDER = {1: 4, -1: 7}
_HIP = {1: 10, -1: 13}
_TORSO_SITES = (1, 2, 3, 16, 4, 7)


def _site_blendshapes(sites):
    """(B, n_sites, 3) site displacements per unit beta; girth acts on offsets only."""
    B = np.zeros((N_BETAS,) + sites.shape)
    B[0, :, 1] = 0.08 * sites[:, 1]
    for side in (1, -1):
        sh, hip = _SHOULDER[side], _HIP[side]
        for s in _ARM_SITES[side]:
            B[2, s] = 0.10 * (sites[s] - sites[sh])
            B[3, s] = np.array([0, 0.06 * sites[sh, 1], 0]) - 0.05 * (sites[s] - sites[sh])
        for s in _LEG_SITES[side]:
            B[2, s] = 0.10 * (sites[s] - sites[hip])
            B[3, s] = -0.05 * (sites[s] - sites[hip])
    for s in _TORSO_SITES:
        B[3, s] = [0, 0.06 * sites[s, 1], 0]
    return B


GIRTH_RATE = np.array([0.0, 0.12, 0.0, 0.0])


def _perp_basis(d):
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    # keep e1 roughly along world x for vertical bones so rx is the wide axis
    return e1, e2


@dataclass(frozen=True)
class BodyTemplate:
    vertices: np.ndarray          # (V, 3) canonical
    triangles: np.ndarray         # (F, 3) int
    parents: np.ndarray           # (J,)
    skin_weights: np.ndarray      # (V, J)
    shapedirs: np.ndarray         # (B, V, 3)
    regressor: np.ndarray         # (J, V)
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    segment: np.ndarray = field(repr=False, default=None)   # owning joint per vertex

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_betas(self):
        return len(self.shapedirs)

    def normalize(self, pts):
        return (np.asarray(pts) - self.bbox_min) / (self.bbox_max - self.bbox_min)

    def denormalize(self, coords):
        return self.bbox_min + np.asarray(coords) * (self.bbox_max - self.bbox_min)

    @property
    def children(self):
        return [np.flatnonzero(self.parents == k) for k in range(self.n_joints)]

    @property
    def subtree_mask(self):
        """(J, J) bool, [m, k] true when k is m or a descendant of m."""
        J = self.n_joints
        M = np.eye(J, dtype=bool)
        for k in range(J):
            p = self.parents[k]
            while p >= 0:
                M[p, k] = True
                p = self.parents[p]
        return M


@lru_cache(maxsize=None)
def build_template():
    """Deterministic procedural template (about 460 vertices)."""
    sites = _a_pose_sites()
    site_shapes = _site_blendshapes(sites)
    verts, tris, weights, seg_of, shapes = [], [], [], [], []
    reg = np.zeros((N_JOINTS, 0))
    reg_rows = [[] for _ in range(N_JOINTS)]

    for k in range(N_JOINTS):
        end, rx, rz, n_rings = _SEGMENTS[k]
        a, b = sites[k], sites[end]
        axis = b - a
        length = np.linalg.norm(axis)
        d = axis / length
        e1, e2 = _perp_basis(d)
        leaf = end >= N_JOINTS
        ts = np.linspace(0, 1, n_rings)
        base = len(verts)
        angles = 2 * np.pi * np.arange(_AROUND) / _AROUND
        parent = PARENTS[k]

        def add_vertex(t, offset):
            verts.append(a + t * axis + offset)
            w = np.zeros(N_JOINTS)
            # half-and-half at each joint, fading to rigid over 40% of the bone
            to_parent = 0.5 * max(0.0, 1.0 - max(t, 0.0) / 0.4) if parent >= 0 else 0.0
            to_child = 0.5 * max(0.0, 1.0 - max(1.0 - t, 0.0) / 0.4) if not leaf else 0.0
            w[k] = 1.0 - to_parent - to_child
            if to_parent > 0:
                w[parent] = to_parent
            if to_child > 0:
                w[end] = to_child
            weights.append(w)
            seg_of.append(k)
            # shape displacement: interpolated site motion plus girth on the offset
            disp = (1 - t) * site_shapes[:, k] + t * site_shapes[:, end]
            disp = disp + GIRTH_RATE[:, None] * offset[None, :]
            shapes.append(disp)

        for ri, t in enumerate(ts):
            for ang in angles:
                add_vertex(t, rx * np.cos(ang) * e1 + rz * np.sin(ang) * e2)
            if ri == 0:
                reg_rows[k] = list(range(base, base + _AROUND))
        pole0 = len(verts)
        r_cap = min(rx, rz)
        add_vertex(-r_cap / length, np.zeros(3))
        pole1 = len(verts)
        add_vertex(1.0 + r_cap / length, np.zeros(3))

        R = len(ts)
        for ri in range(R - 1):
            for i in range(_AROUND):
                j = (i + 1) % _AROUND
                v00 = base + ri * _AROUND + i
                v01 = base + ri * _AROUND + j
                v10 = base + (ri + 1) * _AROUND + i
                v11 = base + (ri + 1) * _AROUND + j
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        last = base + (R - 1) * _AROUND
        for i in range(_AROUND):
            j = (i + 1) % _AROUND
            tris.append((pole0, base + j, base + i))
            tris.append((pole1, last + i, last + j))

    V = np.array(verts)
    F = np.array(tris, dtype=np.int64)
    W = np.array(weights)
    S = np.transpose(np.array(shapes), (1, 0, 2))
    reg = np.zeros((N_JOINTS, len(V)))
    for k, rows in enumerate(reg_rows):
        reg[k, rows] = 1.0 / len(rows)
    F = _orient_outward(V, F, np.array(seg_of), sites)
    for arr in (V, F, W, S, reg):
        arr.flags.writeable = False
    return BodyTemplate(V, F, PARENTS.copy(), W, S, reg, V.min(axis=0), V.max(axis=0), np.array(seg_of))


def _orient_outward(V, F, seg_of, sites):
    out = F.copy()
    for n, (i, j, k) in enumerate(F):
        nrm = np.cross(V[j] - V[i], V[k] - V[i])
        seg = seg_of[i]
        end = _SEGMENTS[seg][0]
        a, b = sites[seg], sites[end]
        c = (V[i] + V[j] + V[k]) / 3
        d = (b - a) / np.linalg.norm(b - a)
        s = np.clip(np.dot(c - a, d), 0, np.linalg.norm(b - a))
        if np.dot(nrm, c - (a + s * d)) < 0:
            out[n] = (i, k, j)
    return out


@dataclass
class BodyParams:
    betas: np.ndarray = field(default_factory=lambda: np.zeros(N_BETAS))
    pose: np.ndarray = field(default_factory=lambda: np.zeros((N_JOINTS, 3)))
    root: Sim3 = field(default_factory=Sim3)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float).reshape(-1)
        self.pose = np.asarray(self.pose, dtype=float).reshape(-1, 3)
        if np.abs(self.betas).max(initial=0) > BETA_LIMIT + 1e-9:
            raise ValueError("|beta| must be <= %g" % BETA_LIMIT)
        if np.linalg.norm(self.pose, axis=1).max(initial=0) > np.pi + 1e-9:
            raise ValueError("joint rotation angle must be <= pi")

    def copy(self):
        return BodyParams(self.betas.copy(), self.pose.copy(), self.root)

    def to_dict(self):
        return {
            "betas": self.betas.tolist(),
            "pose": self.pose.tolist(),
            "root": {"scale": self.root.scale, "rotation": self.root.rotation.tolist(),
                     "translation": self.root.translation.tolist()},
        }

    @classmethod
    def from_dict(cls, d):
        r = d["root"]
        return cls(np.array(d["betas"]), np.array(d["pose"]),
                   Sim3(r["scale"], np.array(r["rotation"]), np.array(r["translation"])))


def sample_params(rng, template=None, pose_scale=1.0, beta_std=1.0, root=None):
    """Random plausible body; the pelvis rotation is left to the root transform."""
    template = template or build_template()
    betas = np.clip(rng.normal(0, beta_std, template.n_betas), -2.5, 2.5)
    pose = rng.normal(0, 1, (template.n_joints, 3)) * POSE_SAMPLE_STD[:, None] * pose_scale
    pose[0] = 0.0
    return BodyParams(betas, pose, root or Sim3())


@dataclass
class SkinResult:
    vertices: np.ndarray       # (V, 3) world
    joints: np.ndarray         # (J, 3) world
    rest_vertices: np.ndarray  # shaped canonical
    rest_joints: np.ndarray
    global_rot: np.ndarray     # (J, 3, 3) pre-root
    global_pos: np.ndarray     # (J, 3) pre-root
    per_joint: np.ndarray      # (V, J, 3) pre-root vertex under each joint transform
    posed_local: np.ndarray    # (V, 3) pre-root LBS output


def skin(template, params):
    """Linear blend skinning followed by the root similarity."""
    shaped = template.vertices + np.einsum("b,bvc->vc", params.betas, template.shapedirs)
    Jr = template.regressor @ shaped
    Rl = so3_exp(params.pose)
    J = template.n_joints
    Rg = np.empty((J, 3, 3))
    pg = np.empty((J, 3))
    for k in range(J):
        p = template.parents[k]
        if p < 0:
            Rg[k] = Rl[k]
            pg[k] = Jr[k]
        else:
            Rg[k] = Rg[p] @ Rl[k]
            pg[k] = Rg[p] @ Jr[k] + (pg[p] - Rg[p] @ Jr[p])
    # (V, J, 3): each joint's transform applied to every vertex
    # written as R x + (p - R J) and blended as offsets so the rest pose is reproduced bit-exactly
    shift = pg - np.einsum("jab,jb->ja", Rg, Jr)
    Y = np.einsum("jab,vb->vja", Rg, shaped) + shift[None]
    posed = shaped + np.einsum("vj,vja->va", template.skin_weights, Y - shaped[:, None, :])
    return SkinResult(params.root.apply(posed), params.root.apply(pg), shaped, Jr, Rg, pg, Y, posed)


def skin_body(template, params):
    """Posed vertices and joints, both in world coordinates."""
    res = skin(template, params)
    return res.vertices, res.joints


def joints_from_params(template, params):
    return skin(template, params).joints


def vertex_normals(vertices, triangles):
    fn = np.cross(vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
                  vertices[triangles[:, 2]] - vertices[triangles[:, 0]])
    vn = np.zeros_like(vertices)
    for c in range(3):
        np.add.at(vn, triangles[:, c], fn)
    n = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.maximum(n, 1e-12)
