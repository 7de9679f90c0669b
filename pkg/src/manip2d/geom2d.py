"""Planar geometry kernel: SE(2) poses, convex polygons, and contact queries.

Conventions used throughout the package:
  * angles are wrapped to (-pi, pi]; the -pi tie maps to +pi
  * polygons store counter-clockwise vertices in their local frame
  * contact normals point from shape A into shape B
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_TWO_PI = 2.0 * np.pi
CONVEXITY_TOL = 1e-9


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi], ties at -pi map to +pi."""
    return np.pi - (np.pi - np.asarray(theta)) % _TWO_PI


@dataclass(frozen=True)
class Pose2:
    """SE(2) pose; theta is wrapped on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_array(a) -> "Pose2":
        return Pose2(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Twist2:
    """Planar velocity (vx, vy, omega)."""

    vx: float
    vy: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega])

    @staticmethod
    def from_array(a) -> "Twist2":
        return Twist2(float(a[0]), float(a[1]), float(a[2]))

    @staticmethod
    def zero() -> "Twist2":
        return Twist2(0.0, 0.0, 0.0)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Rigid-body composition a * b."""
    c, s = np.cos(a.theta), np.sin(a.theta)
    return Pose2(
        a.x + b.x * c - b.y * s,
        a.y + b.x * s + b.y * c,
        a.theta + b.theta,
    )


def inverse(p: Pose2) -> Pose2:
    c, s = np.cos(p.theta), np.sin(p.theta)
    return Pose2(-(p.x * c + p.y * s), p.x * s - p.y * c, -p.theta)


def transform_point(pose: Pose2, point) -> np.ndarray:
    """Map a local-frame point into the world frame."""
    c, s = np.cos(pose.theta), np.sin(pose.theta)
    px, py = float(point[0]), float(point[1])
    return np.array([pose.x + px * c - py * s, pose.y + px * s + py * c])


def rotate_vector(theta: float, vec) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    vx, vy = float(vec[0]), float(vec[1])
    return np.array([vx * c - vy * s, vx * s + vy * c])


def relative_pose(goal: Pose2, obj: Pose2):
    """Object pose expressed in the goal frame.

    Returns (x_err, theta_err): the 2-vector position error and the wrapped
    orientation error. Zero iff the poses coincide.
    """
    rel = compose(inverse(goal), obj)
    return np.array([rel.x, rel.y]), rel.theta


class PolygonError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon, CCW vertex order, local frame."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise PolygonError("polygon needs >= 3 planar vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= CONVEXITY_TOL):
            raise PolygonError("vertices must be strictly convex and counter-clockwise")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area <= CONVEXITY_TOL:
            raise PolygonError("polygon has non-positive area")
        object.__setattr__(self, "vertices", v)

    @staticmethod
    def box(half_width: float, half_height: float) -> "ConvexPolygon":
        w, h = float(half_width), float(half_height)
        return ConvexPolygon(np.array([[-w, -h], [w, -h], [w, h], [-w, h]]))

    @property
    def area(self) -> float:
        v = self.vertices
        return float(0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        a = 0.5 * np.sum(cr)
        return np.array([np.sum((x + xn) * cr), np.sum((y + yn) * cr)]) / (6.0 * a)

    @property
    def radius(self) -> float:
        """Bounding-circle radius about the local origin (broadphase bound)."""
        return float(np.max(np.hypot(self.vertices[:, 0], self.vertices[:, 1])))

    def world_vertices(self, pose: Pose2) -> np.ndarray:
        c, s = np.cos(pose.theta), np.sin(pose.theta)
        v = self.vertices
        return np.stack(
            [pose.x + v[:, 0] * c - v[:, 1] * s, pose.y + v[:, 0] * s + v[:, 1] * c], axis=1
        )


@dataclass(frozen=True)
class ContactManifold:
    """Contact between two convex shapes.

    normal: unit vector pointing from A into B
    penetration: minimum translation distance (>= 0)
    points: (k, 2) world-space contact points, k in {1, 2}
    point_depths: per-point depth along the normal (>= -eps), solver detail
    """

    normal: np.ndarray
    penetration: float
    points: np.ndarray
    point_depths: np.ndarray = field(default=None)


def batch_world_vertices(local_verts: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Transform one local vertex set (k, 2) by N poses (N, 3) -> (N, k, 2)."""
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    x = local_verts[None, :, 0]
    y = local_verts[None, :, 1]
    wx = poses[:, 0:1] + x * c - y * s
    wy = poses[:, 1:2] + x * s + y * c
    return np.stack([wx, wy], axis=2)


def _edge_normals(verts: np.ndarray, k: int) -> np.ndarray:
    """Outward unit edge normals of CCW polygons, batched (N, >=k, 2) -> (N, k, 2)."""
    v = verts[:, :k]
    e = np.roll(v, -1, axis=1) - v
    n = np.stack([e[..., 1], -e[..., 0]], axis=-1)
    length = np.sqrt(np.sum(n * n, axis=-1, keepdims=True))
    return n / np.maximum(length, 1e-300)


def sat_contact_batch(va: np.ndarray, ka: int, vb: np.ndarray, kb: int):
    """Separating-axis contact for N polygon pairs given world vertices.

    va: (N, >=ka, 2), vb: (N, >=kb, 2), CCW; entries past the real vertex
    counts ka/kb must be repeats of the last real vertex. Returns a dict:
      overlap (N,) bool, normal (N, 2) from A into B, depth (N,),
      points (N, 2, 2), point_depth (N, 2), count (N,).
    Axis ties are broken by a canonical direction key so that swapping the
    argument order exactly negates the normal and preserves the depth.
    """
    na = _edge_normals(va, ka)
    nb = _edge_normals(vb, kb)
    axes = np.concatenate([na, nb], axis=1)  # (N, ka+kb, 2)

    # padded repeat vertices cannot change a min or max projection
    proj_a = np.einsum("nkd,njd->nkj", axes, va)
    proj_b = np.einsum("nkd,njd->nkj", axes, vb)

    # support of the axis owner's own face sits at the max projection
    sep_a_axes = proj_b[:, :ka].min(axis=2) - proj_a[:, :ka].max(axis=2)
    sep_b_axes = proj_a[:, ka:].min(axis=2) - proj_b[:, ka:].max(axis=2)
    sep = np.concatenate([sep_a_axes, sep_b_axes], axis=1)

    best_sep = sep.max(axis=1)
    overlap = best_sep <= 0.0

    # canonical tie-break among axes achieving the max separation
    canon_flip = (axes[..., 0] < 0) | ((axes[..., 0] == 0) & (axes[..., 1] < 0))
    canon = np.where(canon_flip[..., None], -axes, axes)
    key = 4.0 * canon[..., 0] + canon[..., 1]
    is_best = sep >= best_sep[:, None]
    idx = np.where(is_best, key, np.inf).argmin(axis=1)

    n_env = va.shape[0]
    rows = np.arange(n_env)
    axis = axes[rows, idx]
    from_b = idx >= ka
    normal = np.where(from_b[:, None], -axis, axis)  # A -> B
    depth = -best_sep

    # reference face on the axis owner, incident face on the other polygon
    kmax = max(va.shape[1], vb.shape[1])
    va_p, vb_p = _pad_to(va, kmax), _pad_to(vb, kmax)
    ref_verts = np.where(from_b[:, None, None], vb_p, va_p)
    ref_count = np.where(from_b, kb, ka)
    inc_verts = np.where(from_b[:, None, None], va_p, vb_p)
    inc_count = np.where(from_b, ka, kb)
    ref_edge_idx = np.where(from_b, idx - ka, idx)

    points, point_depth, count = _clip_manifold(
        ref_verts, ref_count, ref_edge_idx, inc_verts, inc_count, axis
    )
    return {
        "overlap": overlap,
        "normal": normal,
        "depth": depth,
        "points": points,
        "point_depth": point_depth,
        "count": count,
    }


def _pad_to(verts: np.ndarray, k: int) -> np.ndarray:
    """Pad the vertex axis to length k by repeating the last vertex."""
    if verts.shape[1] >= k:
        return verts
    pad = np.repeat(verts[:, -1:, :], k - verts.shape[1], axis=1)
    return np.concatenate([verts, pad], axis=1)


def _clip_manifold(ref_verts, ref_count, ref_edge_idx, inc_verts, inc_count, ref_normal):
    """Clip the incident edge against the reference face side planes.

    All arrays are batched over the leading axis. Padded vertices (repeats of
    the last real vertex) never win the incident-edge argmin because their
    edge vector is zero, which is masked out.
    Returns up to 2 points kept at depth >= -1e-12 behind the reference face.
    """
    n_env, kmax, _ = ref_verts.shape
    rows = np.arange(n_env)

    r0 = ref_verts[rows, ref_edge_idx]
    r1 = ref_verts[rows, (ref_edge_idx + 1) % ref_count]

    # incident edge: most anti-parallel real edge of the incident polygon
    inc_roll = np.take_along_axis(
        inc_verts, ((np.arange(kmax)[None, :] + 1) % inc_count[:, None])[..., None], axis=1
    )
    inc_e = inc_roll - inc_verts
    inc_n = np.stack([inc_e[..., 1], -inc_e[..., 0]], axis=-1)
    ln = np.sqrt(np.sum(inc_n * inc_n, axis=-1))
    inc_n_unit = inc_n / np.maximum(ln, 1e-300)[..., None]
    dots = np.einsum("nkd,nd->nk", inc_n_unit, ref_normal)
    k_idx = np.arange(kmax)[None, :]
    valid = k_idx < inc_count[:, None]
    dots = np.where(valid & (ln > 1e-12), dots, np.inf)
    inc_idx = dots.argmin(axis=1)
    i0 = inc_verts[rows, inc_idx]
    i1 = inc_verts[rows, (inc_idx + 1) % inc_count]

    tangent = r1 - r0
    tl = np.sqrt(np.sum(tangent * tangent, axis=-1, keepdims=True))
    tangent = tangent / np.maximum(tl, 1e-300)

    # clip segment (i0, i1) to the slab r0 <= t <= r1 along the tangent
    lo = np.sum(r0 * tangent, axis=-1)
    hi = np.sum(r1 * tangent, axis=-1)
    t0 = np.sum(i0 * tangent, axis=-1)
    t1 = np.sum(i1 * tangent, axis=-1)
    seg = t1 - t0
    safe = np.where(np.abs(seg) < 1e-12, 1.0, seg)
    a0 = np.clip((lo - t0) / safe, 0.0, 1.0)
    a1 = np.clip((hi - t0) / safe, 0.0, 1.0)
    alo = np.minimum(a0, a1)
    ahi = np.maximum(a0, a1)
    p0 = i0 + alo[:, None] * (i1 - i0)
    p1 = i0 + ahi[:, None] * (i1 - i0)

    # depth behind the reference face (positive = penetrating)
    face_off = np.sum(r0 * ref_normal, axis=-1)
    d0 = face_off - np.sum(p0 * ref_normal, axis=-1)
    d1 = face_off - np.sum(p1 * ref_normal, axis=-1)

    keep0 = d0 >= -1e-12
    keep1 = (d1 >= -1e-12) & (np.sum((p1 - p0) ** 2, axis=-1) > 1e-20)
    points = np.stack([p0, p1], axis=1)
    depths = np.stack([np.where(keep0, d0, 0.0), np.where(keep1, d1, 0.0)], axis=1)
    # compact: if the first point is dropped but the second kept, swap them
    swap = (~keep0) & keep1
    points[swap] = points[swap][:, ::-1]
    depths[swap] = depths[swap][:, ::-1]
    count = keep0.astype(np.int64) + keep1.astype(np.int64)
    return points, np.maximum(depths, 0.0), count


def polygon_contact(a: ConvexPolygon, pa: Pose2, b: ConvexPolygon, pb: Pose2):
    """SAT contact between two posed convex polygons.

    Returns a ContactManifold when the shapes overlap (penetration 0 for
    tangency) and None when disjoint.
    """
    va = a.world_vertices(pa)[None]
    vb = b.world_vertices(pb)[None]
    out = sat_contact_batch(va, va.shape[1], vb, vb.shape[1])
    if not out["overlap"][0]:
        return None
    count = max(int(out["count"][0]), 1)
    return ContactManifold(
        normal=out["normal"][0],
        penetration=float(max(out["depth"][0], 0.0)),
        points=out["points"][0, :count],
        point_depths=out["point_depth"][0, :count],
    )


def point_polygon_distance(point, poly: ConvexPolygon, pose: Pose2) -> float:
    """Signed distance from a world point to a posed polygon boundary.

    Negative inside, positive outside, zero on the boundary.
    """
    p = np.asarray(point, dtype=np.float64)
    v = poly.world_vertices(pose)
    w = np.roll(v, -1, axis=0)
    e = w - v
    # inside test: point is left of every CCW edge
    cross = e[:, 0] * (p[1] - v[:, 1]) - e[:, 1] * (p[0] - v[:, 0])
    inside = bool(np.all(cross >= -1e-12))
    # distance to the nearest boundary segment
    t = np.clip(np.sum((p - v) * e, axis=1) / np.maximum(np.sum(e * e, axis=1), 1e-300), 0.0, 1.0)
    closest = v + t[:, None] * e
    d = float(np.min(np.hypot(closest[:, 0] - p[0], closest[:, 1] - p[1])))
    return -d if inside else d
