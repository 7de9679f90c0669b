import numpy as np
import pytest

from manip2d.geom2d import (
    ConvexPolygon,
    Pose2,
    PolygonError,
    compose,
    inverse,
    point_polygon_distance,
    polygon_contact,
    relative_pose,
    wrap_angle,
)


def rand_pose(rng, span=2.0):
    return Pose2(rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-8, 8))


def rand_convex(rng, n=6, scale=0.5):
    # random convex polygon: sorted angles on a random ellipse
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    if np.min(np.diff(ang)) < 0.15 or ang[0] + 2 * np.pi - ang[-1] < 0.15:
        return rand_convex(rng, n, scale)
    a, b = rng.uniform(0.4, 1.0, 2) * scale
    return ConvexPolygon(np.stack([a * np.cos(ang), b * np.sin(ang)], axis=1))


def test_wrap_angle_convention():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)  # tie goes to +pi
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(0.0) == 0.0


def test_compose_identity():
    p = Pose2(1.0, 2.0, 0.3)
    q = compose(Pose2.identity(), p)
    assert q.as_array() == pytest.approx(p.as_array())


def test_compose_translation():
    q = compose(Pose2(1, 0, 0), Pose2(0, 1, 0))
    assert q.as_array() == pytest.approx([1.0, 1.0, 0.0])


def test_compose_rotation():
    q = compose(Pose2(0, 0, np.pi / 2), Pose2(1, 0, 0))
    assert q.as_array() == pytest.approx([0.0, 1.0, np.pi / 2])


def test_compose_associative_and_inverse():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = rand_pose(rng), rand_pose(rng), rand_pose(rng)
        lhs = compose(compose(a, b), c).as_array()
        rhs = compose(a, compose(b, c)).as_array()
        assert np.allclose(lhs[:2], rhs[:2], atol=1e-12)
        assert abs(wrap_angle(lhs[2] - rhs[2])) < 1e-12
        ident = compose(a, inverse(a)).as_array()
        assert np.allclose(ident[:2], [0, 0], atol=1e-12)
        assert abs(wrap_angle(ident[2])) < 1e-12


def test_relative_pose_coincident():
    g = Pose2(0.3, -0.2, 1.1)
    x_err, th_err = relative_pose(g, g)
    assert np.allclose(x_err, 0, atol=1e-12)
    assert th_err == pytest.approx(0.0, abs=1e-12)


def test_relative_pose_axis_aligned():
    x_err, th_err = relative_pose(Pose2(0, 0, 0), Pose2(0.1, 0, 0))
    assert x_err == pytest.approx([0.1, 0.0])
    assert th_err == 0.0


def test_relative_pose_rotated_goal():
    # goal frame rotated +90deg: a world +y offset reads as +x in goal frame
    x_err, th_err = relative_pose(Pose2(0, 0, np.pi / 2), Pose2(0, 1, np.pi / 2))
    assert x_err == pytest.approx([1.0, 0.0], abs=1e-12)
    assert th_err == pytest.approx(0.0, abs=1e-12)


def test_relative_pose_matches_compose_inverse_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g, o = rand_pose(rng), rand_pose(rng)
        x_err, th_err = relative_pose(g, o)
        oracle = compose(inverse(g), o)
        assert np.allclose(x_err, [oracle.x, oracle.y], atol=1e-12)
        assert th_err == pytest.approx(oracle.theta, abs=1e-12)
        if np.allclose(g.as_array(), o.as_array()):
            assert np.allclose(x_err, 0)


def test_polygon_validation():
    with pytest.raises(PolygonError):
        ConvexPolygon(np.array([[0, 0], [1, 0]]))
    with pytest.raises(PolygonError):  # clockwise
        ConvexPolygon(np.array([[0, 0], [0, 1], [1, 0]]))
    with pytest.raises(PolygonError):  # non-convex
        ConvexPolygon(np.array([[0, 0], [2, 0], [2, 2], [1, 0.1], [0, 2]]))
    sq = ConvexPolygon.box(0.5, 0.5)
    assert sq.area == pytest.approx(1.0)
    assert sq.centroid == pytest.approx([0, 0])


def test_contact_disjoint():
    sq = ConvexPolygon.box(0.5, 0.5)
    assert polygon_contact(sq, Pose2(0, 0, 0), sq, Pose2(3, 0, 0)) is None


def test_contact_overlapping_squares():
    sq = ConvexPolygon.box(0.5, 0.5)
    m = polygon_contact(sq, Pose2(0, 0, 0), sq, Pose2(0.5, 0, 0))
    assert m is not None
    assert m.penetration == pytest.approx(0.5, abs=1e-12)
    assert abs(m.normal[0]) == pytest.approx(1.0)
    assert m.normal[1] == pytest.approx(0.0, abs=1e-12)


def test_contact_touching_squares():
    sq = ConvexPolygon.box(0.5, 0.5)
    m = polygon_contact(sq, Pose2(0, 0, 0), sq, Pose2(1.0, 0, 0))
    assert m is not None
    assert m.penetration == pytest.approx(0.0, abs=1e-12)


def brute_force_mtd(a, pa, b, pb, n_dirs=3600):
    """Minimum translation distance by dense direction search.

    For each unit direction u, the overlap along u is
    max_a(u . va) - min_b(u . vb) when positive; the MTD is the minimum
    positive overlap over directions for which separation fails everywhere.
    """
    va, vb = a.world_vertices(pa), b.world_vertices(pb)
    best = np.inf
    for k in range(n_dirs):
        u = np.array([np.cos(2 * np.pi * k / n_dirs), np.sin(2 * np.pi * k / n_dirs)])
        overlap = va @ u
        overlap_b = vb @ u
        sep = overlap_b.min() - overlap.max()
        if sep > 0:
            return None  # disjoint
        best = min(best, -sep)
    return best


def test_contact_penetration_vs_brute_force():
    sq = ConvexPolygon.box(0.5, 0.5)
    m = polygon_contact(sq, Pose2(0, 0, 0), sq, Pose2(0.5, 0, 0))
    bf = brute_force_mtd(sq, Pose2(0, 0, 0), sq, Pose2(0.5, 0, 0))
    assert m.penetration == pytest.approx(bf, abs=1e-9)

    rng = np.random.default_rng(2)
    hits = 0
    for _ in range(60):
        a, b = rand_convex(rng), rand_convex(rng)
        pa, pb = rand_pose(rng, 0.4), rand_pose(rng, 0.4)
        m = polygon_contact(a, pa, b, pb)
        bf = brute_force_mtd(a, pa, b, pb)
        if bf is None:
            assert m is None or m.penetration < 1e-6
        else:
            hits += 1
            assert m is not None
            # dense search gives an upper bound within grid resolution
            assert m.penetration == pytest.approx(bf, abs=2e-3)
            assert m.penetration <= bf + 1e-12
    assert hits > 10


def test_contact_swap_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = rand_convex(rng), rand_convex(rng)
        pa, pb = rand_pose(rng, 0.4), rand_pose(rng, 0.4)
        m1 = polygon_contact(a, pa, b, pb)
        m2 = polygon_contact(b, pb, a, pa)
        assert (m1 is None) == (m2 is None)
        if m1 is not None:
            assert m1.penetration == pytest.approx(m2.penetration, abs=1e-12)
            assert np.allclose(m1.normal, -m2.normal, atol=1e-12)


def test_contact_normal_is_unit():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b = rand_convex(rng), rand_convex(rng)
        m = polygon_contact(a, rand_pose(rng, 0.3), b, rand_pose(rng, 0.3))
        if m is not None:
            assert np.hypot(*m.normal) == pytest.approx(1.0, abs=1e-9)
            assert m.penetration >= 0
            assert 1 <= len(m.points) <= 2


def test_point_distance_square():
    sq = ConvexPolygon.box(0.5, 0.5)
    assert point_polygon_distance([0, 0], sq, Pose2(0, 0, 0)) == pytest.approx(-0.5)
    assert point_polygon_distance([1.5, 0], sq, Pose2(0, 0, 0)) == pytest.approx(1.0)
    assert point_polygon_distance([0.5, 0], sq, Pose2(0, 0, 0)) == pytest.approx(0.0, abs=1e-12)


def test_point_distance_vs_boundary_sampling():
    rng = np.random.default_rng(5)
    poly = rand_convex(rng)
    pose = rand_pose(rng, 0.3)
    # dense boundary sampling oracle
    v = poly.world_vertices(pose)
    samples = []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        t = np.linspace(0, 1, 4000, endpoint=False)[:, None]
        samples.append(a + t * (b - a))
    boundary = np.concatenate(samples)
    for _ in range(50):
        p = rng.uniform(-1.2, 1.2, 2)
        d = point_polygon_distance(p, poly, pose)
        assert abs(abs(d) - np.min(np.hypot(*(boundary - p).T))) < 1e-6
