"""World-state containers, simulation parameters, and task scenes.

The world is a side view: gravity along -y, table surface at y = 0, arm base
at the origin. bodies[0] is the manipulated target object by convention;
static fixtures (table, slot jaws, wall) follow.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geom2d import ConvexPolygon, Pose2, Twist2

DELAY_SLOTS = 9  # ring buffer size, supports delays up to 8 sim steps

GRIPPER_OPEN = "open"
GRIPPER_CLOSE = "close"


def polygon_inertia(shape: ConvexPolygon, mass: float) -> float:
    """Second moment about the centroid for a uniform convex polygon."""
    v = shape.vertices - shape.centroid
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    num = np.sum(cross * (np.sum(v * v, axis=1) + np.sum(v * w, axis=1) + np.sum(w * w, axis=1)))
    den = 6.0 * np.sum(cross)
    return float(mass * num / den)


@dataclass
class BodyState:
    """One rigid body: pose, twist, shape, and material parameters."""

    pose: Pose2
    twist: Twist2
    shape: ConvexPolygon
    mass: float
    inertia: float
    friction: tuple
    is_static: bool = False

    def __post_init__(self):
        if not self.is_static and (self.mass <= 0 or self.inertia <= 0):
            raise ValueError("dynamic bodies need positive mass and inertia")
        if self.friction[1] > self.friction[0]:
            raise ValueError("dynamic friction must be <= static friction")


@dataclass
class WorldState:
    """Complete simulator snapshot: the MDP state."""

    q: np.ndarray
    qd: np.ndarray
    gripper_opening: float
    gripper_command: str
    bodies: list
    goal: Pose2
    torque_delay_buffer: np.ndarray = None
    time: float = 0.0
    gripper_vel: float = 0.0
    abnormal: bool = False

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(3).copy()
        self.qd = np.asarray(self.qd, dtype=np.float64).reshape(3).copy()
        if self.torque_delay_buffer is None:
            self.torque_delay_buffer = np.zeros((DELAY_SLOTS, 3))
        else:
            self.torque_delay_buffer = np.asarray(self.torque_delay_buffer, dtype=np.float64)
        if self.gripper_command not in (GRIPPER_OPEN, GRIPPER_CLOSE):
            raise ValueError("gripper_command must be 'open' or 'close'")


@dataclass(frozen=True)
class SimParams:
    """Integrator and contact constants."""

    dt: float = 1.0 / 120.0
    gravity: float = 9.81
    contact_kn: float = 1e4
    contact_kd: float = 50.0
    substeps: int = 1  # implicit contact impulses keep stiff kn stable at 1/120
    contact_iterations: int = 4
    friction_v_eps: float = 1e-3
    joint_v_eps: float = 0.02

    def __post_init__(self):
        if self.dt <= 0 or self.contact_kn <= 0 or self.contact_kd <= 0 or self.substeps < 1:
            raise ValueError("invalid simulation parameters")


@dataclass(frozen=True)
class Workspace:
    x_range: tuple = (-0.6, 0.6)
    y_range: tuple = (0.0, 0.6)

    def contains(self, x, y, inflate: float = 0.0):
        return (
            (x >= self.x_range[0] - inflate)
            & (x <= self.x_range[1] + inflate)
            & (y >= self.y_range[0] - inflate)
            & (y <= self.y_range[1] + inflate)
        )


DEFAULT_WORKSPACE = Workspace()

# arm rest configuration: ee ~ (0.40, 0.46), comfortably inside the workspace
REST_Q = np.array([1.8, -1.6, -0.2])


@dataclass(frozen=True)
class BodySpec:
    """Template for one body in a scene."""

    name: str
    vertices: np.ndarray
    mass: float
    friction: tuple
    is_static: bool = False
    anchor: str = "world"  # "world" | "goal_x" (statics shifted with the goal sample)
    pose: tuple = (0.0, 0.0, 0.0)

    @property
    def shape(self) -> ConvexPolygon:
        return ConvexPolygon(np.asarray(self.vertices, dtype=np.float64))


@dataclass(frozen=True)
class SceneSpec:
    """A task scene: bodies, spawn ranges, goal sampler, success thresholds."""

    name: str
    variant: str
    bodies: tuple
    spawn_x: tuple
    spawn_drop_height: float
    goal_x: tuple
    goal_y: float
    goal_theta: float
    target_index: int = 0

    def goal_pose(self, goal_x: float) -> Pose2:
        return Pose2(goal_x, self.goal_y, self.goal_theta)

    def body_states(self, goal_x: float):
        """Instantiate BodyStates for a sampled goal; target pose is placeholder."""
        out = []
        for spec in self.bodies:
            x, y, th = spec.pose
            if spec.anchor == "goal_x":
                x = x + goal_x
            shape = spec.shape
            mass = spec.mass if not spec.is_static else 1.0
            out.append(
                BodyState(
                    pose=Pose2(x, y, th),
                    twist=Twist2.zero(),
                    shape=shape,
                    mass=mass,
                    inertia=polygon_inertia(shape, mass),
                    friction=tuple(spec.friction),
                    is_static=spec.is_static,
                )
            )
        return out

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "name": self.name,
            "variant": self.variant,
            "target_index": self.target_index,
            "bodies": [
                {
                    "name": b.name,
                    "vertices": np.asarray(b.vertices).tolist(),
                    "mass": b.mass,
                    "friction": list(b.friction),
                    "static": b.is_static,
                    "anchor": b.anchor,
                    "pose": list(b.pose),
                }
                for b in self.bodies
            ],
            "spawn": {"x": list(self.spawn_x), "drop_height": self.spawn_drop_height},
            "goal": {"x": list(self.goal_x), "y": self.goal_y, "theta": self.goal_theta},
        }

    def scene_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class SceneFormatError(ValueError):
    pass


def scene_from_json_dict(d: dict) -> SceneSpec:
    try:
        if d.get("schema_version") != 1:
            raise SceneFormatError(f"unsupported scene schema_version {d.get('schema_version')}")
        bodies = tuple(
            BodySpec(
                name=b["name"],
                vertices=np.asarray(b["vertices"], dtype=np.float64),
                mass=float(b["mass"]),
                friction=(float(b["friction"][0]), float(b["friction"][1])),
                is_static=bool(b["static"]),
                anchor=b.get("anchor", "world"),
                pose=tuple(float(v) for v in b.get("pose", (0, 0, 0))),
            )
            for b in d["bodies"]
        )
        return SceneSpec(
            name=d["name"],
            variant=d["variant"],
            bodies=bodies,
            spawn_x=tuple(d["spawn"]["x"]),
            spawn_drop_height=float(d["spawn"].get("drop_height", 0.12)),
            goal_x=tuple(d["goal"]["x"]),
            goal_y=float(d["goal"]["y"]),
            goal_theta=float(d["goal"]["theta"]),
            target_index=int(d.get("target_index", 0)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise SceneFormatError(f"malformed scene specification: {exc}") from exc


def save_scene(scene: SceneSpec, path):
    with open(path, "w") as f:
        json.dump(scene.to_json_dict(), f, indent=1, sort_keys=True)


def load_scene(path) -> SceneSpec:
    with open(path) as f:
        return scene_from_json_dict(json.load(f))


_TABLE = BodySpec(
    name="table",
    vertices=ConvexPolygon.box(1.2, 0.05).vertices,
    mass=20.0,
    friction=(0.45, 0.35),
    is_static=True,
    pose=(0.0, -0.05, 0.0),
)


def _jaw_vertices(side: int):
    """Slot jaw: a box with a 45-degree 8 mm chamfer at the inner top corner.

    side=-1 is the left jaw (chamfer on its right/top), side=+1 the right.
    Local frame centered at the jaw's box center; CCW order.
    """
    w, h, ch = 0.03, 0.03, 0.008
    if side < 0:
        verts = [(-w, -h), (w, -h), (w, h - ch), (w - ch, h), (-w, h)]
    else:
        verts = [(-w, -h), (w, -h), (w, h), (-w + ch, h), (-w, h - ch)]
    return np.array(verts, dtype=np.float64)


def peg_insert_scene(variant: str = "hard") -> SceneSpec:
    """Rectangular peg (0.03 x 0.12 m) into a chamfered slot with 2 mm clearance."""
    peg = BodySpec(
        name="peg",
        vertices=ConvexPolygon.box(0.06, 0.015).vertices,  # long axis local x
        mass=0.06,
        friction=(1.5, 1.4),
        anchor="world",
    )
    half_gap = 0.016  # slot half width: peg half width 0.015 + 1 mm
    jaw_l = BodySpec(
        name="jaw_left",
        vertices=_jaw_vertices(-1),
        mass=1.0,
        friction=(0.45, 0.35),
        is_static=True,
        anchor="goal_x",
        pose=(-(half_gap + 0.03), 0.03, 0.0),
    )
    jaw_r = BodySpec(
        name="jaw_right",
        vertices=_jaw_vertices(+1),
        mass=1.0,
        friction=(0.45, 0.35),
        is_static=True,
        anchor="goal_x",
        pose=(half_gap + 0.03, 0.03, 0.0),
    )
    if variant == "hard":
        spawn_x, goal_x = (-0.55, -0.15), (0.2, 0.5)
    elif variant == "easy":
        spawn_x, goal_x = (-0.25, -0.23), (0.35, 0.35)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return SceneSpec(
        name="PegInsert2D",
        variant=variant,
        bodies=(peg, _TABLE, jaw_l, jaw_r),
        spawn_x=spawn_x,
        spawn_drop_height=0.1,
        goal_x=goal_x,
        goal_y=0.06,  # vertical peg seated on the table inside the slot
        goal_theta=np.pi / 2,
    )


def block_wall_scene(variant: str = "hard") -> SceneSpec:
    """Push/flip a 0.06 m square to a goal pose flush against a wall."""
    block = BodySpec(
        name="block",
        vertices=ConvexPolygon.box(0.03, 0.03).vertices,
        mass=0.08,
        friction=(1.2, 1.1),
        anchor="world",
    )
    wall = BodySpec(
        name="wall",
        vertices=ConvexPolygon.box(0.02, 0.06).vertices,
        mass=1.0,
        friction=(0.5, 0.4),
        is_static=True,
        anchor="goal_x",
        pose=(0.05, 0.06, 0.0),  # wall face at goal_x + 0.03, flush with the block
    )
    if variant == "hard":
        spawn_x, goal_x = (-0.55, -0.15), (0.2, 0.5)
    elif variant == "easy":
        spawn_x, goal_x = (-0.25, -0.23), (0.35, 0.35)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return SceneSpec(
        name="BlockWall2D",
        variant=variant,
        bodies=(block, _TABLE, wall),
        spawn_x=spawn_x,
        spawn_drop_height=0.1,
        goal_x=goal_x,
        goal_y=0.03,
        goal_theta=np.pi / 2,  # a quarter turn from any settled face: the flip
    )


SCENES = {
    "PegInsert2D": peg_insert_scene,
    "BlockWall2D": block_wall_scene,
}


def make_scene(name: str, variant: str = "hard") -> SceneSpec:
    if name not in SCENES:
        raise ValueError(f"unknown scene {name!r}; known: {sorted(SCENES)}")
    return SCENES[name](variant)
