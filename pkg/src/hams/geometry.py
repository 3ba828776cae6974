"""Core 3D types and closed-form solvers.

Conventions: rotation matrices act on column vectors, quaternions are
``(w, x, y, z)`` with ``w >= 0`` after canonicalisation, camera frames follow
the pinhole convention x right, y down, z forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, InsufficientData, NotARotation

ROT_TOL = 1e-6


# --------------------------------------------------------------------------
# rotation helpers (batched over leading axes)
# --------------------------------------------------------------------------

def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R):
    """Shepperd's method; returns unit quaternions with non-negative w."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for n, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        k = int(np.argmax([tr, m[0, 0], m[1, 1], m[2, 2]]))
        if k == 0:
            s = np.sqrt(1.0 + tr) * 2
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif k == 1:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif k == 2:
            s = np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        q /= np.linalg.norm(q)
        out[n] = -q if q[0] < 0 else q
    return out.reshape(R.shape[:-2] + (4,))


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def axis_angle_to_quat(aa):
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(t/2)/t via series when t is tiny
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta ** 2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), k * aa], axis=-1)


def quat_to_axis_angle(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    q = np.where(q[..., :1] < 0, -q, q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(s, w)
    small = s < 1e-8
    safe = np.where(small, 1.0, s)
    k = np.where(small, 2.0 / w * (1.0 - s ** 2 / (3.0 * w ** 2)), theta / safe)
    return k * v


def so3_exp(aa):
    """Axis-angle vector(s) to rotation matrix(es)."""
    return quat_to_matrix(axis_angle_to_quat(aa))


def so3_log(R):
    """Rotation matrix(es) to axis-angle vector(s), angle in [0, pi]."""
    return quat_to_axis_angle(matrix_to_quat(R))


def is_rotation(R, tol=ROT_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def check_rotation(R, tol=ROT_TOL):
    if not is_rotation(R, tol):
        raise NotARotation("matrix is not in SO(3) within %g" % tol)
    return np.asarray(R, dtype=float)


def project_to_rotation(M):
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def rotation_geodesic_deg(R1, R2):
    """Geodesic angle between two rotations, in degrees within [0, 180].

    Uses ``atan2(sin, cos)`` of the relative rotation, which equals the usual
    ``arccos((tr(R1^T R2) - 1) / 2)`` but keeps full precision near 0 and 180.
    """
    R1 = check_rotation(R1)
    R2 = check_rotation(R2)
    return _geodesic_unchecked(R1, R2)


def _geodesic_unchecked(R1, R2):
    Rr = np.asarray(R1).T @ np.asarray(R2)
    c = np.clip((np.trace(Rr) - 1.0) / 2.0, -1.0, 1.0)
    sv = np.array([Rr[2, 1] - Rr[1, 2], Rr[0, 2] - Rr[2, 0], Rr[1, 0] - Rr[0, 1]])
    s = 0.5 * np.linalg.norm(sv)
    return float(np.clip(np.degrees(np.arctan2(s, c)), 0.0, 180.0))


def angle_between_deg(a, b):
    """Angle between two non-zero vectors in degrees."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))))


# --------------------------------------------------------------------------
# Sim3
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Sim3:
    """x -> scale * rotation @ x + translation."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("Sim3 scale must be positive, got %r" % self.scale)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        A = M[:3, :3]
        s = np.cbrt(np.linalg.det(A))
        return cls(s, A / s, M[:3, 3])

    @classmethod
    def from_quat(cls, q, t, scale=1.0):
        return cls(scale, quat_to_matrix(q), t)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * x @ self.rotation.T + self.translation

    __call__ = apply

    def compose(self, other: "Sim3") -> "Sim3":
        """``self ∘ other``: apply ``other`` first."""
        return Sim3(self.scale * other.scale,
                    self.rotation @ other.rotation,
                    self.scale * self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Sim3":
        Rt = self.rotation.T
        return Sim3(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def apply_rotation(self, R):
        return self.rotation @ R

    @property
    def quaternion(self):
        return matrix_to_quat(self.rotation)

    def is_close(self, other, atol=1e-9):
        return (abs(self.scale - other.scale) <= atol * max(1.0, other.scale)
                and np.abs(self.rotation - other.rotation).max() <= atol
                and np.abs(self.translation - other.translation).max()
                <= atol * (np.linalg.norm(other.translation) + 1))

    def __repr__(self):
        return "Sim3(scale=%.6g, aa=%s, t=%s)" % (
            self.scale, np.array2string(so3_log(self.rotation), precision=4),
            np.array2string(self.translation, precision=4))


def umeyama_sim3(src, dst, weights=None, allow_scale=True):
    """Weighted least-squares similarity (or rigid) transform mapping src onto dst.

    Minimises ``sum_i w_i |dst_i - T(src_i)|^2`` with the SVD construction and
    the determinant-sign fix against reflections.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have equal length")
    n = len(src)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != n:
        raise ValueError("weights must match point count")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    wsum = w.sum()
    if n < 3 or wsum <= 0:
        raise DegenerateConfiguration("need >= 3 points with positive total weight")
    w = w / wsum

    mu_s = w @ src
    mu_d = w @ dst
    ds = src - mu_s
    dd = dst - mu_d
    var_s = float(w @ np.einsum("ij,ij->i", ds, ds))

    cov_s = (ds * w[:, None]).T @ ds
    sv = np.linalg.svd(cov_s, compute_uv=False)
    if var_s <= 0 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("points are collinear or coincident")

    sigma = (dd * w[:, None]).T @ ds
    U, d, Vt = np.linalg.svd(sigma)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = float((d * S).sum() / var_s) if allow_scale else 1.0
    if scale <= 0:
        raise DegenerateConfiguration("non-positive scale estimate")
    t = mu_d - scale * R @ mu_s
    return Sim3(scale, R, t)


# --------------------------------------------------------------------------
# Camera / pointmap
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    pose: Sim3
    focal: float
    principal_point: tuple
    width: int
    height: int

    def __post_init__(self):
        if abs(self.pose.scale - 1.0) > 1e-9:
            raise ValueError("camera pose must have unit scale")
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        cx, cy = self.principal_point
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point outside image")
        object.__setattr__(self, "principal_point", (float(cx), float(cy)))

    @property
    def center(self):
        return self.pose.translation

    @property
    def rotation(self):
        return self.pose.rotation

    def pixel_rays(self):
        """(H, W, 3) camera-frame ray directions with unit z."""
        cx, cy = self.principal_point
        u = (np.arange(self.width) - cx) / self.focal
        v = (np.arange(self.height) - cy) / self.focal
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)

    def project(self, X_world):
        """World points to (pixels (N, 2), depth (N,))."""
        Xc = self.pose.inverse().apply(X_world)
        z = Xc[..., 2]
        cx, cy = self.principal_point
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.focal * Xc[..., 0] / z + cx, self.focal * Xc[..., 1] / z + cy], axis=-1)
        return uv, z


def image_center(width, height):
    return ((width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class Pointmap:
    points: np.ndarray
    frame: int = 0

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim != 3 or P.shape[-1] != 3:
            if P.size == 0:
                P = P.reshape(0, 0, 3)
            else:
                raise ValueError("pointmap must be H x W x 3")
        if not np.all(np.isfinite(P)):
            raise ValueError("pointmap entries must be finite")
        object.__setattr__(self, "points", P)

    @property
    def height(self):
        return self.points.shape[0]

    @property
    def width(self):
        return self.points.shape[1]


def check_confidence(conf):
    """Validate a confidence grid (values already mapped to [1, inf))."""
    conf = np.asarray(conf, dtype=float)
    if conf.size and (not np.all(np.isfinite(conf)) or conf.min() < 1.0):
        raise ValueError("confidence values must be finite and >= 1")
    return conf


def pointmap_to_depth(pointmap):
    P = pointmap.points if isinstance(pointmap, Pointmap) else np.asarray(pointmap, dtype=float)
    if P.size == 0:
        return np.zeros(P.shape[:2])
    return P[..., 2].copy()


def estimate_focal(pointmap, principal_point, iters=50, min_pixels=100):
    """Robust pinhole focal length from a camera-frame pointmap.

    Starts from the least-squares solution and refines with Weiszfeld-style
    reweighting (weights ``1 / |residual|``) so outlying pixels lose influence.
    """
    P = pointmap.points if isinstance(pointmap, Pointmap) else np.asarray(pointmap, dtype=float)
    H, W = P.shape[:2]
    cx, cy = principal_point
    uu, vv = np.meshgrid(np.arange(W) - cx, np.arange(H) - cy)
    z = P[..., 2]
    valid = z > 0
    if valid.sum() < min_pixels:
        raise InsufficientData("need >= %d pixels in front of the camera" % min_pixels)
    p = np.stack([uu[valid], vv[valid]], axis=-1)
    q = P[valid][:, :2] / z[valid][:, None]

    pq = np.einsum("ij,ij->i", p, q)
    qq = np.einsum("ij,ij->i", q, q)
    f = pq.sum() / qq.sum()
    scale = np.sqrt(np.mean(np.einsum("ij,ij->i", p, p))) + 1e-12
    for _ in range(iters):
        r = np.linalg.norm(p - f * q, axis=1)
        w = 1.0 / np.maximum(r, 1e-9 * scale)
        f_new = (w * pq).sum() / (w * qq).sum()
        if abs(f_new - f) <= 1e-12 * abs(f):
            f = f_new
            break
        f = f_new
    if not f > 0:
        raise InsufficientData("focal estimate is not positive")
    return float(f)
