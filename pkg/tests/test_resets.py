import json

import numpy as np
import pytest

from manip2d.arm import DEFAULT_ARM
from manip2d.geom2d import ConvexPolygon, Pose2, compose
from manip2d.resets import (
    EmptyGraspSet,
    FormatError,
    GRASPED,
    GoalOffset,
    NEAR_GOAL,
    NEAR_OBJECT,
    REACHING,
    REGIONS,
    ResetDataset,
    ResetGenConfig,
    ValidationError,
    build_dataset,
    generate_goal_offsets,
    generate_region,
    grasp_arc_center,
    load_dataset,
    rest_poses,
    sample_grasps,
    sample_reset,
    save_dataset,
    validate_batch,
    validate_reset,
)
from manip2d.world import make_scene

PEG = ConvexPolygon.box(0.06, 0.015)
SQUARE = ConvexPolygon.box(0.03, 0.03)


@pytest.fixture(scope="module")
def peg_scene():
    return make_scene("PegInsert2D", "hard")


@pytest.fixture(scope="module")
def grasps():
    return sample_grasps(SQUARE, n=200, grasp_range="broad", mu=0.5, seed=0)


def test_square_broad_grasps_cover_both_axes():
    gs = sample_grasps(SQUARE, n=400, grasp_range="broad", mu=0.5, seed=1)
    # brute-force oracle: discretized edge-pair contacts of a square admit
    # grasps across either opposite-edge pair, width 0.06
    widths = np.array([g.width for g in gs])
    assert np.all(widths <= DEFAULT_ARM.gripper_max_opening + 1e-12)
    qualities = np.array([g.quality for g in gs])
    assert np.max(qualities) > 0.999  # perpendicular grasps have quality 1
    thetas = np.array([g.ee_pose_in_object_frame.theta for g in gs])
    # grasp axes along both x and y of the square appear
    horizontal = np.abs(np.abs(np.abs(thetas) - np.pi / 2)) < 0.6
    assert horizontal.any() and (~horizontal).any()


def test_grasps_satisfy_friction_cone_exactly():
    # the squeeze direction must oppose some surface normal on each side of
    # the object within the friction cone (exact geometric check)
    mu = 0.4
    gs = sample_grasps(PEG, n=200, grasp_range="broad", mu=mu, seed=2)
    cone = np.arctan(mu)
    v = PEG.vertices
    w = np.roll(v, -1, axis=0)
    normals = np.stack([(w - v)[:, 1], -(w - v)[:, 0]], axis=1)
    normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
    for g in gs:
        ee = g.ee_pose_in_object_frame
        # squeeze axis is the gripper y axis expressed in the object frame
        axis = np.array([-np.sin(ee.theta), np.cos(ee.theta)])
        d1 = min(abs(np.arccos(np.clip(-(axis @ n), -1, 1))) for n in normals)
        d2 = min(abs(np.arccos(np.clip((axis @ n), -1, 1))) for n in normals)
        assert d1 <= cone + 1e-9
        assert d2 <= cone + 1e-9
        assert 0 < g.width <= DEFAULT_ARM.gripper_max_opening


def test_zero_mu_only_antiparallel():
    gs = sample_grasps(SQUARE, n=50, grasp_range="broad", mu=0.0, seed=3)
    for g in gs:
        assert g.quality == pytest.approx(1.0, abs=1e-9)


def test_oversized_object_raises():
    big = ConvexPolygon.box(0.2, 0.2)  # wider than the opening in every direction
    with pytest.raises(EmptyGraspSet):
        sample_grasps(big, n=10, grasp_range="broad", mu=0.5, seed=4)


def grasp_centers(grasps):
    # contact midpoint = ee origin advanced pad_forward along the approach
    out = []
    for g in grasps:
        ee = g.ee_pose_in_object_frame
        out.append(
            [
                ee.x + DEFAULT_ARM.pad_forward * np.cos(ee.theta),
                ee.y + DEFAULT_ARM.pad_forward * np.sin(ee.theta),
            ]
        )
    return np.asarray(out)


def test_grasp_range_restricts_arc():
    broad = sample_grasps(PEG, n=300, grasp_range="broad", mu=0.5, seed=5)
    narrow = sample_grasps(PEG, n=300, grasp_range="narrow", mu=0.5, seed=5)
    # narrow grasps cluster near the far end of the peg, broad cover more
    xs_broad = grasp_centers(broad)[:, 0]
    xs_narrow = grasp_centers(narrow)[:, 0]
    assert xs_broad.std() > 2.0 * xs_narrow.std()
    assert np.ptp(xs_broad) > 0.1  # most of the 0.12 length
    assert np.ptp(xs_narrow) < 0.05


def test_rest_poses_square():
    poses = rest_poses(SQUARE)
    assert len(poses) == 4
    for theta, height in poses:
        assert height == pytest.approx(0.03)


def test_goal_offsets(peg_scene):
    offsets = generate_goal_offsets(peg_scene, m=60, seed=0)
    assert len(offsets) == 60
    norms = np.array([np.hypot(o.pose_offset_in_goal_frame.x, o.pose_offset_in_goal_frame.y) for o in offsets])
    rots = np.array([abs(o.pose_offset_in_goal_frame.theta) for o in offsets])
    assert np.all(norms <= 0.06 + 1e-12)
    assert np.all(rots <= 0.6 + 1e-12)
    # graded insertion depths: several distinct displacement magnitudes
    assert len(np.unique(np.round(norms, 3))) >= 10


def test_goal_offset_bounds_enforced():
    with pytest.raises(ValueError):
        GoalOffset(pose_offset_in_goal_frame=Pose2(0.1, 0.0, 0.0))


@pytest.fixture(scope="module")
def peg_grasps():
    return sample_grasps(PEG, n=300, grasp_range="broad", mu=0.5,
                         seed=0)


@pytest.fixture(scope="module")
def peg_offsets(peg_scene):
    return generate_goal_offsets(peg_scene, m=80, seed=0)


def test_generate_each_region(peg_scene, peg_grasps, peg_offsets):
    for region in REGIONS:
        recs = generate_region(region, peg_scene, peg_grasps, peg_offsets, count=24, seed=1)
        assert len(recs) == 24
        for rec in recs:
            assert rec.region == region
            assert validate_reset(rec, peg_scene)


def test_grasped_records_touch_both_pads(peg_scene, peg_grasps, peg_offsets):
    from manip2d.controller import GainSet, Limits, osc_torque_batch
    from manip2d.engine import BatchSim

    recs = generate_region(GRASPED, peg_scene, peg_grasps, peg_offsets, count=8, seed=2)
    sim = BatchSim.from_scene(peg_scene, len(recs))
    for i, st in enumerate(recs):
        sim.set_env_state(i, st.q, st.qd, st.gripper_opening,
                          1 if st.gripper_command == "close" else 0,
                          st.body_poses, st.body_twists, st.goal)
    hold = sim.ee_pose().copy()
    for _ in range(12):
        tau = osc_torque_batch(sim.q, sim.qd, hold, GainSet(), Limits())
        sim.step(tau)
    assert sim.pad_touch.all()


def test_invalid_resets_rejected(peg_scene, peg_grasps, peg_offsets):
    rec = generate_region(REACHING, peg_scene, peg_grasps, peg_offsets, count=1, seed=3)[0]
    # object embedded in the table
    bad = ResetDataset(records=[], scene_hash="", config={})  # unused, silence lint
    rec_bad = rec
    rec_bad.body_poses = rec.body_poses.copy()
    rec_bad.body_poses[0, 1] = -0.01
    assert not validate_reset(rec_bad, peg_scene)


def test_balanced_on_vertex_rejected(peg_scene, peg_grasps, peg_offsets):
    rec = generate_region(REACHING, peg_scene, peg_grasps, peg_offsets, count=1, seed=4)[0]
    rec.body_poses = rec.body_poses.copy()
    rec.body_poses[0] = [-0.3, 0.0618, np.pi / 4]  # corner balance, topples
    assert not validate_reset(rec, peg_scene)


def test_sample_reset_uniformity(peg_scene, peg_grasps, peg_offsets):
    per_region = {r: generate_region(r, peg_scene, peg_grasps, peg_offsets, count=25, seed=5)
                  for r in REGIONS}
    datasets = [
        ResetDataset(records=per_region[r], scene_hash=peg_scene.scene_hash(), config={})
        for r in REGIONS
    ]
    rng = np.random.default_rng(0)
    counts = {r: 0 for r in REGIONS}
    draws = 10_000
    for _ in range(draws):
        rec = sample_reset(datasets, rng)
        counts[rec.region] += 1
    for r in REGIONS:
        assert abs(counts[r] / draws - 0.25) < 0.02


def test_sample_reset_singleton_and_determinism(peg_scene, peg_grasps, peg_offsets):
    rec = generate_region(REACHING, peg_scene, peg_grasps, peg_offsets, count=1, seed=6)[0]
    ds = ResetDataset(records=[rec], scene_hash="", config={})
    rng = np.random.default_rng(1)
    assert sample_reset(ds, rng) is rec
    seq1 = [sample_reset(ds, np.random.default_rng(7)).seed for _ in range(5)]
    seq2 = [sample_reset(ds, np.random.default_rng(7)).seed for _ in range(5)]
    assert seq1 == seq2


def test_dataset_roundtrip(tmp_path, peg_scene, peg_grasps, peg_offsets):
    recs = []
    for region in REGIONS:
        recs.extend(generate_region(region, peg_scene, peg_grasps, peg_offsets, count=6, seed=7))
    ds = ResetDataset(records=recs, scene_hash=peg_scene.scene_hash(), config={"seed": 7})
    path = tmp_path / "resets.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path, scene=peg_scene, revalidate_fraction=0.2)
    assert len(loaded) == len(ds)
    assert loaded.scene_hash == ds.scene_hash
    for a, b in zip(ds.records, loaded.records):
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.body_poses, b.body_poses)
        assert a.gripper_opening == b.gripper_opening
        assert a.seed == b.seed


def test_dataset_truncated_file(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema_version": 1, "scene_hash": "x", "config": {}}\n{"region": "reach')
    with pytest.raises(FormatError):
        load_dataset(path)


def test_dataset_tampered_record(tmp_path, peg_scene, peg_grasps, peg_offsets):
    recs = generate_region(REACHING, peg_scene, peg_grasps, peg_offsets, count=4, seed=8)
    ds = ResetDataset(records=recs, scene_hash=peg_scene.scene_hash(), config={})
    path = tmp_path / "resets.jsonl"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    row = json.loads(lines[1])
    row["bodies"][0]["pose"][1] = -0.02  # object inside the table
    lines[1] = json.dumps(row)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        load_dataset(path, scene=peg_scene, revalidate_fraction=1.0)


def test_generation_deterministic(peg_scene, peg_grasps, peg_offsets):
    a = generate_region(NEAR_OBJECT, peg_scene, peg_grasps, peg_offsets, count=6, seed=9)
    b = generate_region(NEAR_OBJECT, peg_scene, peg_grasps, peg_offsets, count=6, seed=9)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.q, rb.q)
        assert np.array_equal(ra.body_poses, rb.body_poses)
        assert ra.seed == rb.seed


def test_states_inside_workspace(peg_scene, peg_grasps, peg_offsets):
    from manip2d.arm import fk_batch
    from manip2d.world import DEFAULT_WORKSPACE

    for region in REGIONS:
        recs = generate_region(region, peg_scene, peg_grasps, peg_offsets, count=10, seed=10)
        for rec in recs:
            ee = fk_batch(rec.q[None])[0]
            assert DEFAULT_WORKSPACE.contains(ee[0], ee[1], inflate=0.02)
            assert DEFAULT_WORKSPACE.contains(rec.body_poses[0, 0], rec.body_poses[0, 1], inflate=0.02)
