"""Diverse reset-state generation: the four validated region datasets.

Regions cover approach (reaching), contact initiation (near-object), stable
prehension (grasped), and near-completion states (near-goal). Candidates are
constructed geometrically, then validated in batches by collision checking
plus a short stabilization roll with the controller holding the current pose.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .arm import ActuatorParams, ArmSpec, DEFAULT_ARM, fk_batch, inverse_kinematics
from .controller import GainSet, Limits, osc_torque_batch
from .engine import BatchSim, pad_poses_from_ee
from .geom2d import ConvexPolygon, Pose2, compose, wrap_angle
from .world import DEFAULT_WORKSPACE, SceneSpec, SimParams, Workspace

REACHING = "reaching"
NEAR_OBJECT = "near_object"
GRASPED = "grasped"
NEAR_GOAL = "near_goal"
REGIONS = (REACHING, NEAR_OBJECT, GRASPED, NEAR_GOAL)
REGION_ALIASES = {"R": REACHING, "NO": NEAR_OBJECT, "G": GRASPED, "NG": NEAR_GOAL}

GRASP_PRELOAD = 8e-4  # pads squeezed this far into the held object
OFFSET_MAX_TRANSLATION = 0.06
OFFSET_MAX_ROTATION = 0.6
STABILIZE_STEPS = 24
DRIFT_POS_TOL = 2e-3
DRIFT_ROT_TOL = 0.02
PENETRATION_TOL = 1e-3


class EmptyGraspSet(RuntimeError):
    pass


class GenerationStall(RuntimeError):
    pass


class FormatError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class GraspCandidate:
    ee_pose_in_object_frame: Pose2
    width: float
    quality: float


@dataclass(frozen=True)
class GoalOffset:
    pose_offset_in_goal_frame: Pose2

    def __post_init__(self):
        p = self.pose_offset_in_goal_frame
        if np.hypot(p.x, p.y) > OFFSET_MAX_TRANSLATION + 1e-12 or abs(p.theta) > OFFSET_MAX_ROTATION + 1e-12:
            raise ValueError("goal offset outside the dislodge bounds")


@dataclass
class ResetState:
    region: str
    q: np.ndarray
    qd: np.ndarray
    gripper_opening: float
    gripper_command: str
    body_poses: np.ndarray  # (B, 3) including static fixtures
    body_twists: np.ndarray
    goal: np.ndarray
    seed: int

    def key_arrays(self):
        return (self.q, self.qd, np.array([self.gripper_opening]), self.body_poses.ravel(),
                self.body_twists.ravel(), self.goal)


@dataclass
class ResetDataset:
    records: list
    scene_hash: str
    config: dict
    region_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = {r: 0 for r in REGIONS}
        for rec in self.records:
            counts[rec.region] = counts.get(rec.region, 0) + 1
        self.region_counts = counts

    def __len__(self):
        return len(self.records)

    def config_hash(self) -> str:
        payload = json.dumps(self.config, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ------------------------------------------------------------------- grasps


def _boundary_tables(poly: ConvexPolygon):
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    e = w - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / lengths[:, None]
    return v, e, lengths, cum, normals


def _point_at(s, v, e, lengths, cum):
    """Boundary point and edge index at arclength s (wrapped)."""
    total = cum[-1]
    s = s % total
    idx = int(np.searchsorted(cum, s, side="right") - 1)
    idx = min(idx, len(lengths) - 1)
    t = (s - cum[idx]) / lengths[idx]
    return v[idx] + t * e[idx], idx


def grasp_arc_center(poly: ConvexPolygon) -> float:
    """Arclength of the boundary point farthest from the centroid.

    Grasp ranges are centered here: the far end of elongated objects is the
    widest-clearance place to hold them.
    """
    v, e, lengths, cum, _ = _boundary_tables(poly)
    c = poly.centroid
    samples = np.linspace(0, cum[-1], 720, endpoint=False)
    best_s, best_d = 0.0, -1.0
    for s in samples:
        p, _ = _point_at(s, v, e, lengths, cum)
        d = np.hypot(p[0] - c[0], p[1] - c[1])
        if d > best_d:
            best_s, best_d = s, d
    return best_s


GRASP_RANGES = {"broad": 1.0, "moderate": 0.5, "narrow": 0.2}


def sample_grasps(
    obj: ConvexPolygon,
    n: int = 1000,
    grasp_range: str = "broad",
    mu: float = 0.5,
    max_opening: float = DEFAULT_ARM.gripper_max_opening,
    pad_forward: float = DEFAULT_ARM.pad_forward,
    seed: int = 0,
):
    """Antipodal grasp sampling on the object boundary.

    Both contact normals must oppose the squeeze axis within the friction
    cone atan(mu); separation must fit the gripper. The admissible boundary
    fraction shrinks with the range setting, centered on the far end.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if grasp_range not in GRASP_RANGES:
        raise ValueError(f"unknown grasp range {grasp_range!r}")
    frac = GRASP_RANGES[grasp_range]
    v, e, lengths, cum, normals = _boundary_tables(obj)
    total = cum[-1]
    center = grasp_arc_center(obj)
    half_arc = 0.5 * frac * total
    cone = np.arctan(mu)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x96A5]))

    total = cum[-1]

    def arc_ok(s):
        ds = abs((s - center) % total)
        return min(ds, total - ds) <= half_arc + 1e-12

    out = []
    attempts = 0
    max_attempts = 200 * n
    while len(out) < n and attempts < max_attempts:
        attempts += 1
        s1 = center + rng.uniform(-half_arc, half_arc)
        p1, e1 = _point_at(s1, v, e, lengths, cum)
        n1 = normals[e1]
        # squeeze direction sampled inside the friction cone about -n1,
        # second contact found by casting through the object
        phi = rng.uniform(-cone, cone) if cone > 0 else 0.0
        cphi, sphi = np.cos(phi), np.sin(phi)
        d = np.array([-n1[0] * cphi + n1[1] * sphi, -n1[0] * sphi - n1[1] * cphi])
        hit = _ray_exit(p1, d, v, e, lengths)
        if hit is None:
            continue
        p2, e2, t = hit
        if e2 == e1:
            continue
        # flat jaws stop at the support extent along the squeeze axis, so
        # that is the physical opening (equals |p2-p1| for flush grasps)
        proj = v @ d
        width = float(proj.max() - proj.min())
        if width < 1e-6 or width > max_opening:
            continue
        n2 = normals[e2]
        # the reaction force -d at contact 2 must lie in the cone about -n2
        a2 = np.arccos(np.clip(d @ n2, -1.0, 1.0))
        if a2 > cone + 1e-9:
            continue
        # the range restricts where the reference contact may lie; the
        # antipodal partner lands wherever the cast exits
        if not arc_ok(s1):
            continue
        quality = float(0.5 * (-(d @ n1) + (d @ n2)))
        mid = 0.5 * (p1 + p2)
        # gripper y axis along the squeeze axis; two approach signs
        sign = 1.0 if rng.random() < 0.5 else -1.0
        theta = float(np.arctan2(d[1], d[0]) - sign * np.pi / 2)
        approach = np.array([np.cos(theta), np.sin(theta)])
        origin = mid - pad_forward * approach
        out.append(
            GraspCandidate(
                ee_pose_in_object_frame=Pose2(float(origin[0]), float(origin[1]), theta),
                width=width,
                quality=quality,
            )
        )
    if not out:
        raise EmptyGraspSet(
            "no antipodal grasp satisfies the cone/opening constraints "
            f"(range={grasp_range}, mu={mu}, max_opening={max_opening})"
        )
    return out


def _ray_exit(p, d, v, e, lengths):
    """Exit intersection of an inward ray with the polygon boundary."""
    best = None
    for i in range(len(v)):
        ex, ey = e[i]
        denom = d[0] * (-ey) + d[1] * ex
        if abs(denom) < 1e-14:
            continue
        rel = v[i] - p
        t = (rel[0] * (-ey) + rel[1] * ex) / denom
        u = (d[0] * rel[1] - d[1] * rel[0]) / denom
        if t > 1e-9 and -1e-12 <= u <= 1.0 + 1e-12:
            if best is None or t > best[2]:
                best = (p + t * d, i, t)
    return best


# -------------------------------------------------------------- rest poses


def rest_poses(poly: ConvexPolygon):
    """Statically stable tabletop poses: (theta, center height) per edge.

    An edge can support the object iff the centroid projects inside it once
    that edge is rotated to face down.
    """
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    c = poly.centroid
    out = []
    for i in range(len(v)):
        edge = w[i] - v[i]
        n_out = np.array([edge[1], -edge[0]])
        n_out = n_out / np.hypot(*n_out)
        theta = float(wrap_angle(-np.pi / 2 - np.arctan2(n_out[1], n_out[0])))
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        rv, rw, rc = rot @ v[i], rot @ w[i], rot @ c
        lo, hi = min(rv[0], rw[0]), max(rv[0], rw[0])
        if lo + 1e-9 < rc[0] < hi - 1e-9:
            height = -float(min((rot @ v.T)[1]))
            out.append((theta, height))
    if not out:
        raise ValueError("object has no stable rest pose")
    return out


# ------------------------------------------------------------ goal offsets


def generate_goal_offsets(
    scene: SceneSpec,
    m: int = 2000,
    impulse_range: float = 0.08,
    seed: int = 0,
    params: SimParams = None,
    arm: ArmSpec = None,
    batch: int = 256,
):
    """Dislodge the object from the goal with random impulses and record the
    settled relative poses that stay within the offset bounds."""
    params = params or SimParams()
    arm = arm or DEFAULT_ARM
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x60A1]))
    out = []
    attempts = 0
    max_attempts = 10 * m
    settle_steps = int(round(0.25 / params.dt))
    while len(out) < m and attempts < max_attempts:
        k = min(batch, max_attempts - attempts, 4 * (m - len(out)))
        attempts += k
        sim = BatchSim.from_scene(scene, k, params, arm)
        goal_x = rng.uniform(scene.goal_x[0], scene.goal_x[1], k)
        for i in range(k):
            states = scene.body_states(goal_x[i])
            for bi, bs in enumerate(states):
                sim.body_pose[i, bi] = bs.pose.as_array()
            sim.goal[i] = scene.goal_pose(goal_x[i]).as_array()
        tgt = sim.target_idx
        sim.body_pose[:, tgt] = sim.goal
        sim.q[:] = np.array([np.pi / 2, 1.2, 0.0])  # arm parked away from the scene
        park = sim.ee_pose().copy()
        # impulse at a random boundary point of the object
        verts = sim.local_verts[tgt]
        imp = rng.uniform(-impulse_range, impulse_range, (k, 2))
        vert_pick = rng.integers(0, len(verts), k)
        r_local = verts[vert_pick]
        c, s = np.cos(sim.body_pose[:, tgt, 2]), np.sin(sim.body_pose[:, tgt, 2])
        rx = r_local[:, 0] * c - r_local[:, 1] * s
        ry = r_local[:, 0] * s + r_local[:, 1] * c
        sim.body_twist[:, tgt, 0] += imp[:, 0] / sim.mass[:, tgt]
        sim.body_twist[:, tgt, 1] += imp[:, 1] / sim.mass[:, tgt]
        sim.body_twist[:, tgt, 2] += (rx * imp[:, 1] - ry * imp[:, 0]) / sim.inertia[:, tgt]
        gains, limits = GainSet(), Limits()
        for _ in range(settle_steps):
            tau = osc_torque_batch(sim.q, sim.qd, park, gains, limits, arm, gravity=params.gravity)
            sim.step(tau)
        # relative pose of the settled object in the goal frame
        for i in range(k):
            if sim.abnormal[i]:
                continue
            goal_pose = Pose2.from_array(sim.goal[i])
            obj_pose = Pose2.from_array(sim.body_pose[i, tgt])
            rel = compose(_inverse(goal_pose), obj_pose)
            if np.hypot(rel.x, rel.y) <= OFFSET_MAX_TRANSLATION and abs(rel.theta) <= OFFSET_MAX_ROTATION:
                out.append(GoalOffset(pose_offset_in_goal_frame=rel))
                if len(out) >= m:
                    break
    if len(out) < m:
        raise GenerationStall(f"goal-offset acceptance {len(out)}/{attempts} too low")
    return out[:m]


def _inverse(p: Pose2) -> Pose2:
    from .geom2d import inverse

    return inverse(p)


# --------------------------------------------------------------- generation


@dataclass
class ResetGenConfig:
    grasp_range: str = "broad"
    grasp_count: int = 1000
    grasp_mu: float = 0.5
    offset_count: int = 2000
    offset_impulse: float = 0.08
    near_offset_ball: float = 0.02
    near_retreat: float = 0.03
    grasped_y: tuple = (0.1, 0.5)
    # in-air holds need a rotationally stable pinch; near-flush grasps only
    grasped_min_quality: float = 0.98
    validate_batch: int = 512

    def to_dict(self):
        return {
            "grasp_range": self.grasp_range,
            "grasp_count": self.grasp_count,
            "grasp_mu": self.grasp_mu,
            "offset_count": self.offset_count,
            "offset_impulse": self.offset_impulse,
            "near_offset_ball": self.near_offset_ball,
            "near_retreat": self.near_retreat,
            "grasped_y": list(self.grasped_y),
            "grasped_min_quality": self.grasped_min_quality,
            "validate_batch": self.validate_batch,
        }


def _ik_any(target: Pose2, arm: ArmSpec, rng):
    branches = [1, -1] if rng.random() < 0.5 else [-1, 1]
    for elbow in branches:
        q = inverse_kinematics(target, arm, elbow=elbow)
        if q is not None:
            return q
    return None


def _pads_clear(ee_pose: Pose2, opening: float, sim: BatchSim, body_poses, arm: ArmSpec):
    """Quick geometric clearance check of both pads against all bodies."""
    from .geom2d import polygon_contact

    pads = pad_poses_from_ee(ee_pose.as_array()[None], np.array([opening]), arm)
    pad_poly = ConvexPolygon.box(arm.pad_half_len, arm.pad_half_thickness)
    pad_r = pad_poly.radius
    for pad in pads:
        pad_pose = Pose2.from_array(pad[0])
        for bi, shape in enumerate(sim.shapes):
            if np.hypot(pad_pose.x - body_poses[bi][0], pad_pose.y - body_poses[bi][1]) > pad_r + sim.radii[bi]:
                continue
            m = polygon_contact(pad_poly, pad_pose, shape, Pose2.from_array(body_poses[bi]))
            if m is not None and m.penetration > PENETRATION_TOL:
                return False
    return True


def _sample_ee_uniform(sim, body_poses, arm, workspace, rng, opening):
    """EE position uniform over the workspace; orientation found by a
    conditional scan so rejection does not bias the position marginal."""
    for _ in range(200):
        x = rng.uniform(*workspace.x_range)
        y = rng.uniform(*workspace.y_range)
        theta0 = rng.uniform(-np.pi, np.pi)
        found = None
        for k in range(24):
            theta = wrap_angle(theta0 + k * (2 * np.pi / 24))
            target = Pose2(x, y, float(theta))
            q = _ik_any(target, arm, rng)
            if q is None:
                continue
            if _pads_clear(target, opening, sim, body_poses, arm):
                found = q
                break
        if found is not None:
            return found
    return None


def _grasp_ee_pose(obj_pose: Pose2, grasp: GraspCandidate, offset: Pose2 = None) -> Pose2:
    ee = compose(obj_pose, grasp.ee_pose_in_object_frame)
    if offset is not None:
        ee = compose(ee, offset)
    return ee


def snap_flush(grasp: GraspCandidate, shape: ConvexPolygon, min_cos: float,
               pad_forward: float = DEFAULT_ARM.pad_forward):
    """Align a near-flush grasp exactly with its face pair.

    Tilted pinches rotate to flush under squeeze anyway; stable in-air holds
    are constructed already aligned. Returns None when the grasp is more
    than acos(min_cos) away from every face normal.
    """
    ee = grasp.ee_pose_in_object_frame
    d = np.array([-np.sin(ee.theta), np.cos(ee.theta)])
    v = shape.vertices
    w = np.roll(v, -1, axis=0)
    normals = np.stack([(w - v)[:, 1], -(w - v)[:, 0]], axis=1)
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    align = -(normals @ d)
    best = int(np.argmax(align))
    if align[best] < min_cos:
        return None
    d2 = -normals[best]
    # choose the approach sign that stays closest to the sampled pose
    cand = [float(np.arctan2(d2[1], d2[0]) - np.pi / 2),
            float(np.arctan2(d2[1], d2[0]) + np.pi / 2)]
    theta2 = min(cand, key=lambda t: abs(wrap_angle(t - ee.theta)))
    mid = np.array(
        [ee.x + pad_forward * np.cos(ee.theta), ee.y + pad_forward * np.sin(ee.theta)]
    )
    proj = v @ d2
    lo, hi = proj.min(), proj.max()
    width = float(hi - lo)
    # center the pads on the support slab along the squeeze axis
    mid = mid + (0.5 * (lo + hi) - mid @ d2) * d2
    approach = np.array([np.cos(theta2), np.sin(theta2)])
    origin = mid - pad_forward * approach
    return GraspCandidate(
        ee_pose_in_object_frame=Pose2(float(origin[0]), float(origin[1]), theta2),
        width=width,
        quality=1.0,
    )


def _region_candidate(region, scene, sim_template, grasps, offsets, arm, workspace, rng, cfg):
    """One geometric candidate ResetState or None when construction fails."""
    goal_x = rng.uniform(scene.goal_x[0], scene.goal_x[1])
    body_states = scene.body_states(goal_x)
    goal = scene.goal_pose(goal_x)
    body_poses = np.array([bs.pose.as_array() for bs in body_states])
    tgt = sim_template.target_idx
    obj_shape = sim_template.shapes[tgt]

    if region in (REACHING, NEAR_OBJECT):
        stable = rest_poses(obj_shape)
        theta, height = stable[rng.integers(0, len(stable))]
        x = rng.uniform(*scene.spawn_x)
        obj_pose = Pose2(x, height, theta)
    elif region == GRASPED:
        obj_pose = Pose2(
            rng.uniform(workspace.x_range[0] + 0.1, workspace.x_range[1] - 0.1),
            rng.uniform(*cfg.grasped_y),
            rng.uniform(-np.pi, np.pi),
        )
    else:  # NEAR_GOAL
        off = offsets[rng.integers(0, len(offsets))]
        obj_pose = compose(goal, off.pose_offset_in_goal_frame)
    body_poses[tgt] = obj_pose.as_array()

    opening_open = arm.gripper_max_opening
    if region == REACHING:
        q = _sample_ee_uniform(sim_template, body_poses, arm, workspace, rng, opening_open)
        if q is None:
            return None
        opening, command = opening_open, "open"
    elif region == GRASPED:
        g = None
        for _ in range(50):
            cand = grasps[rng.integers(0, len(grasps))]
            snapped = snap_flush(cand, obj_shape, cfg.grasped_min_quality, arm.pad_forward)
            if snapped is not None and snapped.width <= arm.gripper_max_opening:
                g = snapped
                break
        if g is None:
            return None
        ee = _grasp_ee_pose(obj_pose, g)
        if not workspace.contains(ee.x, ee.y):
            return None
        q = _ik_any(ee, arm, rng)
        if q is None:
            return None
        opening = max(g.width - 2 * GRASP_PRELOAD, 0.0)
        command = "close"
    else:  # NEAR_OBJECT or NEAR_GOAL: contact-initiation pose near a grasp
        g = grasps[rng.integers(0, len(grasps))]
        ball = rng.uniform(-cfg.near_offset_ball, cfg.near_offset_ball, 2)
        retreat = rng.uniform(0.0, cfg.near_retreat)
        local = Pose2(float(ball[0] - retreat), float(ball[1]), 0.0)
        ee = _grasp_ee_pose(obj_pose, g, local)
        if not workspace.contains(ee.x, ee.y):
            return None
        q = _ik_any(ee, arm, rng)
        if q is None:
            return None
        closed = rng.random() < 0.5
        opening, command = (0.0, "close") if closed else (opening_open, "open")

    return ResetState(
        region=region,
        q=np.asarray(q, dtype=np.float64),
        qd=np.zeros(3),
        gripper_opening=float(opening),
        gripper_command=command,
        body_poses=body_poses,
        body_twists=np.zeros_like(body_poses),
        goal=goal.as_array(),
        seed=int(rng.integers(0, 2**63 - 1)),
    )


def validate_batch(
    states,
    scene: SceneSpec,
    params: SimParams = None,
    arm: ArmSpec = None,
    gains: GainSet = None,
    workspace: Workspace = DEFAULT_WORKSPACE,
):
    """Vectorized validate_reset: collision, abnormality, and stabilization."""
    params = params or SimParams()
    arm = arm or DEFAULT_ARM
    gains = gains or GainSet()
    limits = Limits()
    n = len(states)
    if n == 0:
        return np.zeros(0, dtype=bool)
    sim = BatchSim.from_scene(scene, n, params, arm)
    for i, st in enumerate(states):
        sim.set_env_state(
            i,
            st.q,
            st.qd,
            st.gripper_opening,
            1 if st.gripper_command == "close" else 0,
            st.body_poses,
            st.body_twists,
            st.goal,
        )
    ok = sim.max_penetration() <= PENETRATION_TOL
    ok &= ~sim.check_abnormal(workspace)
    start_pose = sim.body_pose.copy()
    hold = sim.ee_pose().copy()
    for _ in range(STABILIZE_STEPS):
        tau = osc_torque_batch(sim.q, sim.qd, hold, gains, limits, arm, gravity=params.gravity)
        sim.step(tau)
    ok &= ~sim.check_abnormal(workspace)
    delta = sim.body_pose - start_pose
    disp = np.hypot(delta[:, :, 0], delta[:, :, 1])
    rot = np.abs(wrap_angle(delta[:, :, 2]))
    ok &= np.all(disp < DRIFT_POS_TOL, axis=1)
    ok &= np.all(rot < DRIFT_ROT_TOL, axis=1)
    return ok


def validate_reset(state: ResetState, scene: SceneSpec, **kw) -> bool:
    return bool(validate_batch([state], scene, **kw)[0])


def generate_region(
    region: str,
    scene: SceneSpec,
    grasps,
    offsets,
    count: int,
    seed: int = 0,
    cfg: ResetGenConfig = None,
    params: SimParams = None,
    arm: ArmSpec = None,
    workspace: Workspace = DEFAULT_WORKSPACE,
):
    """Generate `count` validated reset states for one region."""
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    if region != REACHING and not grasps:
        raise ValueError(f"region {region} requires a non-empty grasp set")
    if region == NEAR_GOAL and not offsets:
        raise ValueError("near_goal requires a non-empty offset set")
    cfg = cfg or ResetGenConfig()
    params = params or SimParams()
    arm = arm or DEFAULT_ARM
    rng = np.random.default_rng(np.random.SeedSequence([seed, REGIONS.index(region)]))
    sim_template = BatchSim.from_scene(scene, 1, params, arm)

    out = []
    attempts = 0
    max_attempts = max(10 * count, 2000)
    while len(out) < count and attempts < max_attempts:
        want = min(cfg.validate_batch, max(count - len(out), 64))
        batch = []
        while len(batch) < want and attempts < max_attempts:
            attempts += 1
            cand = _region_candidate(
                region, scene, sim_template, grasps, offsets, arm, workspace, rng, cfg
            )
            if cand is not None:
                batch.append(cand)
        ok = validate_batch(batch, scene, params, arm, workspace=workspace)
        out.extend(st for st, good in zip(batch, ok) if good)
    if len(out) < count:
        raise GenerationStall(
            f"{region}: only {len(out)}/{count} valid resets in {attempts} attempts"
        )
    return out[:count]


def sample_reset(datasets, rng) -> ResetState:
    """Uniform draw over the union of records (region mass proportional to count)."""
    if isinstance(datasets, ResetDataset):
        records = datasets.records
    else:
        records = [rec for d in datasets for rec in d.records]
    if not records:
        raise ValueError("cannot sample from an empty dataset")
    return records[rng.integers(0, len(records))]


# ------------------------------------------------------------- persistence


def save_dataset(dataset: ResetDataset, path):
    with open(path, "w") as f:
        header = {
            "schema_version": 1,
            "scene_hash": dataset.scene_hash,
            "config": dataset.config,
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in dataset.records:
            row = {
                "region": rec.region,
                "q": rec.q.tolist(),
                "qd": rec.qd.tolist(),
                "gripper_opening": rec.gripper_opening,
                "gripper_command": rec.gripper_command,
                "bodies": [
                    {"pose": rec.body_poses[i].tolist(), "twist": rec.body_twists[i].tolist()}
                    for i in range(rec.body_poses.shape[0])
                ],
                "goal": rec.goal.tolist(),
                "seed": rec.seed,
            }
            f.write(json.dumps(row) + "\n")


def load_dataset(path, scene: SceneSpec = None, revalidate_fraction: float = 0.01,
                 params: SimParams = None, arm: ArmSpec = None) -> ResetDataset:
    """Load a JSON Lines dataset; re-validates a random subset when a scene
    is provided. Bitwise round trip of all numeric fields."""
    records = []
    try:
        with open(path) as f:
            header_line = f.readline()
            header = json.loads(header_line)
            if header.get("schema_version") != 1:
                raise FormatError(f"unsupported schema_version {header.get('schema_version')}")
            for line in f:
                if not line.strip():
                    continue
                row = json.loads(line)
                records.append(
                    ResetState(
                        region=row["region"],
                        q=np.asarray(row["q"], dtype=np.float64),
                        qd=np.asarray(row["qd"], dtype=np.float64),
                        gripper_opening=float(row["gripper_opening"]),
                        gripper_command=row["gripper_command"],
                        body_poses=np.asarray([b["pose"] for b in row["bodies"]], dtype=np.float64),
                        body_twists=np.asarray([b["twist"] for b in row["bodies"]], dtype=np.float64),
                        goal=np.asarray(row["goal"], dtype=np.float64),
                        seed=int(row["seed"]),
                    )
                )
    except (json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"malformed reset dataset: {exc}") from exc
    dataset = ResetDataset(records=records, scene_hash=header.get("scene_hash", ""), config=header.get("config", {}))
    if scene is not None and records:
        rng = np.random.default_rng(0)
        k = max(1, int(revalidate_fraction * len(records)))
        idx = rng.choice(len(records), size=k, replace=False)
        subset = [records[i] for i in idx]
        ok = validate_batch(subset, scene, params, arm)
        if not np.all(ok):
            bad = [int(i) for i, good in zip(idx, ok) if not good]
            raise ValidationError(f"records failed re-validation on load: {bad}")
    return dataset


def build_dataset(scene: SceneSpec, counts: dict, seed: int = 0, cfg: ResetGenConfig = None,
                  params: SimParams = None, arm: ArmSpec = None) -> ResetDataset:
    """Generate a full dataset: grasps, offsets, then every requested region."""
    cfg = cfg or ResetGenConfig()
    tgt_shape = scene.bodies[scene.target_index].shape
    grasps = sample_grasps(
        tgt_shape,
        n=cfg.grasp_count,
        grasp_range=cfg.grasp_range,
        mu=cfg.grasp_mu,
        max_opening=(arm or DEFAULT_ARM).gripper_max_opening,
        pad_forward=(arm or DEFAULT_ARM).pad_forward,
        seed=seed,
    )
    offsets = generate_goal_offsets(
        scene, m=cfg.offset_count, impulse_range=cfg.offset_impulse, seed=seed,
        params=params, arm=arm,
    )
    records = []
    for region in REGIONS:
        want = counts.get(region, 0)
        if want > 0:
            records.extend(
                generate_region(region, scene, grasps, offsets, want, seed=seed, cfg=cfg,
                                params=params, arm=arm)
            )
    return ResetDataset(records=records, scene_hash=scene.scene_hash(),
                        config={"counts": {k: counts.get(k, 0) for k in REGIONS}, "seed": seed,
                                **cfg.to_dict()})
