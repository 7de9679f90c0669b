import numpy as np
import pytest

from manip2d.arm import ActuatorParams, DEFAULT_ARM, gravity_torque_batch
from manip2d.engine import BatchSim, check_abnormal, step, step_batch
from manip2d.geom2d import ConvexPolygon, Pose2, Twist2
from manip2d.world import (
    REST_Q,
    BodyState,
    SimParams,
    Workspace,
    WorldState,
    make_scene,
    polygon_inertia,
    load_scene,
    save_scene,
)


def free_body_world(pos=(2.0, 0.5), with_table=False, mass=0.05):
    shape = ConvexPolygon.box(0.03, 0.03)
    bodies = [
        BodyState(
            pose=Pose2(pos[0], pos[1], 0.0),
            twist=Twist2.zero(),
            shape=shape,
            mass=mass,
            inertia=polygon_inertia(shape, mass),
            friction=(0.8, 0.6),
        )
    ]
    if with_table:
        tshape = ConvexPolygon.box(1.2, 0.05)
        bodies.append(
            BodyState(
                pose=Pose2(0.0, -0.05, 0.0),
                twist=Twist2.zero(),
                shape=tshape,
                mass=20.0,
                inertia=polygon_inertia(tshape, 20.0),
                friction=(0.5, 0.4),
                is_static=True,
            )
        )
    return WorldState(
        q=REST_Q.copy(),
        qd=np.zeros(3),
        gripper_opening=0.08,
        gripper_command="open",
        bodies=bodies,
        goal=Pose2(0.3, 0.1, 0.0),
    )


def test_polygon_inertia_box():
    shape = ConvexPolygon.box(0.05, 0.02)
    expect = 1.0 * (0.1**2 + 0.04**2) / 12.0
    assert polygon_inertia(shape, 1.0) == pytest.approx(expect, rel=1e-12)


def test_free_fall_ballistic():
    # body far outside arm reach falls under gravity alone
    world = free_body_world(pos=(2.0, 0.5))
    params = SimParams()
    tau = np.zeros(3)
    for _ in range(30):  # 0.25 s
        world = step(world, tau, params=params)
    t = 30 * params.dt
    expect = 0.5 - 0.5 * params.gravity * t * t
    assert abs(world.bodies[0].pose.y - expect) < 2e-3


def test_box_rests_on_table():
    world = free_body_world(pos=(-0.45, 0.03), with_table=True)
    params = SimParams()
    tau = np.zeros(3)
    start = world.bodies[0].pose.as_array()
    for _ in range(240):  # 2 s
        world = step(world, tau, params=params)
    end = world.bodies[0].pose.as_array()
    assert np.hypot(end[0] - start[0], end[1] - start[1]) < 2e-3
    # penetration below table surface under 1 mm
    assert end[1] > 0.03 - 1e-3


def test_torque_delay_buffer():
    world = free_body_world()
    params = SimParams(gravity=0.0)
    act = ActuatorParams.scalar(friction=0.0, armature=0.0, delay=2, damping=0.0)
    world.qd[:] = 0.0
    pulse = np.array([1.0, 0.0, 0.0])
    zero = np.zeros(3)
    w1 = step(world, pulse, actuators=act, params=params)
    assert np.allclose(w1.qd, 0.0)
    w2 = step(w1, zero, actuators=act, params=params)
    assert np.allclose(w2.qd, 0.0)
    w3 = step(w2, zero, actuators=act, params=params)
    assert not np.allclose(w3.qd, 0.0)


def test_zero_delay_acts_immediately():
    world = free_body_world()
    params = SimParams(gravity=0.0)
    act = ActuatorParams.scalar(delay=0, damping=0.0)
    w1 = step(world, np.array([1.0, 0, 0]), actuators=act, params=params)
    assert not np.allclose(w1.qd, 0.0)


def rand_worlds(rng, n, scene_name="PegInsert2D"):
    scene = make_scene(scene_name, "hard")
    sim = BatchSim.from_scene(scene, n)
    worlds = sim.to_worlds()
    for w in worlds:
        w.q[:] = REST_Q + rng.uniform(-0.3, 0.3, 3)
        w.qd[:] = rng.uniform(-0.5, 0.5, 3)
        w.bodies[0].pose = Pose2(rng.uniform(-0.5, -0.2), rng.uniform(0.02, 0.3), rng.uniform(-3, 3))
        w.bodies[0].twist = Twist2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-2, 2))
    return worlds


def test_step_batch_matches_sequential_bitwise():
    rng = np.random.default_rng(0)
    n = 64
    worlds = rand_worlds(rng, n)
    taus = rng.uniform(-3, 3, (n, 3))
    act = ActuatorParams.scalar(friction=0.4, armature=0.01, delay=1)
    batch_out = step_batch(worlds, taus, actuators=act)
    for k in range(n):
        solo = step(worlds[k], taus[k], actuators=act)
        assert np.array_equal(solo.q, batch_out[k].q)
        assert np.array_equal(solo.qd, batch_out[k].qd)
        assert solo.gripper_opening == batch_out[k].gripper_opening
        for bs, bb in zip(solo.bodies, batch_out[k].bodies):
            assert np.array_equal(bs.pose.as_array(), bb.pose.as_array())
            assert np.array_equal(bs.twist.as_array(), bb.twist.as_array())


def test_step_batch_n1_equals_step():
    rng = np.random.default_rng(1)
    worlds = rand_worlds(rng, 1)
    tau = rng.uniform(-2, 2, (1, 3))
    a = step_batch(worlds, tau)[0]
    b = step(worlds[0], tau[0])
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qd, b.qd)


def test_step_batch_permutation_independence():
    rng = np.random.default_rng(2)
    n = 32
    worlds = rand_worlds(rng, n)
    taus = rng.uniform(-2, 2, (n, 3))
    out = step_batch(worlds, taus)
    perm = rng.permutation(n)
    out_p = step_batch([worlds[i] for i in perm], taus[perm])
    for k, pk in enumerate(perm):
        assert np.array_equal(out_p[k].q, out[pk].q)
        assert np.array_equal(out_p[k].bodies[0].pose.as_array(), out[pk].bodies[0].pose.as_array())


def test_determinism_same_inputs():
    rng = np.random.default_rng(3)
    worlds = rand_worlds(rng, 8)
    taus = rng.uniform(-2, 2, (8, 3))
    a = step_batch(worlds, taus)
    b = step_batch(worlds, taus)
    for x, y in zip(a, b):
        assert np.array_equal(x.q, y.q) and np.array_equal(x.qd, y.qd)


def test_energy_nonincreasing_free_swing_with_friction():
    # arm swinging freely, no contacts in reach, nonzero joint friction
    world = free_body_world(pos=(5.0, 0.5))
    world.q[:] = [1.2, -0.8, 0.3]
    world.qd[:] = [1.0, -2.0, 1.5]
    act = ActuatorParams.scalar(friction=1.0, armature=0.0, delay=0, damping=0.2)
    sim = BatchSim.from_worlds([world], act)
    prev = sim.total_energy()[0]
    for _ in range(240):
        sim.step(np.zeros((1, 3)))
        cur = sim.total_energy()[0]
        assert cur <= prev + 1e-9
        prev = cur


def test_energy_bounded_with_contacts():
    # settling box plus arm collapsing onto the table under friction:
    # mechanical plus penalty-spring energy must never increase. Zero
    # actuation includes the gripper servo, so it is disabled here.
    from dataclasses import replace

    world = free_body_world(pos=(-0.45, 0.04), with_table=True)
    act = ActuatorParams.scalar(friction=1.0, damping=0.2)
    arm = replace(DEFAULT_ARM, servo_kp=0.0, servo_kd=0.0)
    sim = BatchSim.from_worlds([world], act, arm=arm)
    allowance = 0.5 * sim.params.contact_kn * (2e-3) ** 2
    first = sim.total_energy()[0] + sim.elastic_energy()[0]
    # the initial crash of the falling arm onto its fingertips exceeds the
    # invariant's <2 mm penetration premise (and elastic measurement double
    # counts penetration detected mid-flight); assert once settled
    for _ in range(180):
        sim.step(np.zeros((1, 3)))
    assert sim.total_energy()[0] + sim.elastic_energy()[0] <= first
    prev = sim.total_energy()[0]
    for _ in range(240):
        sim.step(np.zeros((1, 3)))
        cur = sim.total_energy()[0]
        assert cur <= prev + allowance  # step gain bounded by contact storage
        assert cur + sim.elastic_energy()[0] <= first + 1e-4  # no pumping
        prev = cur
    # the settled box obeys the penetration premise of the energy bound
    assert sim.body_pose[0, 0, 1] > 0.03 - 2e-3


def test_grasp_stability_under_gravity():
    # peg held between closed pads; joint PD holds the arm; slip < 5 mm over 1 s
    from manip2d.arm import inverse_kinematics

    ee_target = Pose2(0.35, 0.3, -np.pi / 2)
    q = None
    for elbow in (1, -1):
        q = inverse_kinematics(ee_target, elbow=elbow)
        if q is not None:
            break
    assert q is not None

    peg_shape = ConvexPolygon.box(0.06, 0.015)
    mass = 0.06
    # gripper x axis points down; pads separate along world x
    obj_pose = Pose2(0.35, 0.3 - DEFAULT_ARM.pad_forward, np.pi / 2)
    world = WorldState(
        q=q,
        qd=np.zeros(3),
        # held means force closure established: pads preloaded 0.4 mm each
        gripper_opening=0.03 - 8e-4,
        gripper_command="close",
        bodies=[
            BodyState(
                pose=obj_pose,
                twist=Twist2.zero(),
                shape=peg_shape,
                mass=mass,
                inertia=polygon_inertia(peg_shape, mass),
                friction=(1.5, 1.4),
            )
        ],
        goal=Pose2(0.3, 0.1, 0.0),
    )
    act = ActuatorParams.scalar(friction=0.0, damping=0.5)
    sim = BatchSim.from_worlds([world], act)
    q0 = sim.q.copy()
    rel0 = sim.body_pose[0, 0, 1] - sim.ee_pose()[0, 1]
    kp = np.array([300.0, 200.0, 5.0])  # wrist inertia is tiny; keep gains stable
    kd = np.array([30.0, 15.0, 0.5])
    for _ in range(120):  # 1 s
        tau = gravity_torque_batch(sim.q) + kp * (q0 - sim.q) - kd * sim.qd
        sim.step(tau)
    # slip is object motion relative to the gripper, not arm-servo sag
    slip = abs((sim.body_pose[0, 0, 1] - sim.ee_pose()[0, 1]) - rel0)
    assert slip < 5e-3
    assert sim.pad_touch[0].all()


def test_check_abnormal_cases():
    world = free_body_world(pos=(-0.3, 0.03), with_table=True)
    assert not check_abnormal(world)
    bad = free_body_world(pos=(-0.3, 0.03), with_table=True)
    bad.q[0] = DEFAULT_ARM.joint_limits_high[0] + 0.01
    assert check_abnormal(bad)
    fallen = free_body_world(pos=(-0.3, -0.1), with_table=True)
    assert check_abnormal(fallen)
    outside = free_body_world(pos=(-0.3, 0.03), with_table=True)
    outside.q[:] = [0.0, 0.0, 0.0]  # ee at (0.9, 0): outside inflated workspace
    assert check_abnormal(outside)


def test_workspace_contains():
    ws = Workspace()
    assert ws.contains(0.0, 0.3)
    assert not ws.contains(0.75, 0.3, inflate=0.1)
    assert ws.contains(0.65, 0.3, inflate=0.1)


def test_scene_json_roundtrip(tmp_path):
    scene = make_scene("PegInsert2D", "hard")
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    loaded = load_scene(path)
    assert loaded.scene_hash() == scene.scene_hash()
    assert loaded.name == scene.name
    assert len(loaded.bodies) == len(scene.bodies)


def test_scene_variants():
    for name in ("PegInsert2D", "BlockWall2D"):
        for variant in ("easy", "hard"):
            scene = make_scene(name, variant)
            sim = BatchSim.from_scene(scene, 4)
            sim.step(np.zeros((4, 3)))
            assert not sim.abnormal.any()
