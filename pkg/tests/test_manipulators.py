"""Manipulator behavior: roll fitting, orbits, search curves, dolly, and
collision push/pull on the anchor half-line."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from cinedrone.geometry import Aabb, BoxObstacle, SceneModel, SphereObstacle
from cinedrone.manipulators import (
    AvoidEllipse,
    avoid_collision,
    build_search_curve,
    extract_roll,
    floor_ceiling_ellipses,
    manipulate_dolly,
    manipulate_position,
    manipulate_view_angle,
    roll_for_viewpoint,
    view_angle_position,
    world_manipulator,
)
from cinedrone.orientation import (
    CameraPose,
    FramingSpec,
    camera_axes,
    feasible_orientation,
    project_point,
)
from cinedrone.toric import (
    RegionLabel,
    Target,
    build_surface,
    camera_region,
    subtended_alpha,
)


@pytest.fixture(scope="module")
def pair_surface():
    a = Target(np.array([0.0, 0.0, 1.0]), ident="a")
    b = Target(np.array([2.0, 0.0, 1.0]), ident="b")
    return build_surface([a, b], alpha=np.pi / 6, d_s=0.4)


def _targets(surface):
    return [t.position for t in surface.targets]


def _framing_at(surface, phi, theta):
    """Screen framing achieved by the roll-free orientation at a chart point."""
    pos = surface.dts_to_world(phi, theta)
    aim = feasible_orientation(pos, FramingSpec.centered(_targets(surface)))
    pose = CameraPose(pos, aim.yaw, aim.tilt)
    screen = [project_point(p, pose) for p in _targets(surface)]
    assert all(s is not None for s in screen)
    return FramingSpec(_targets(surface), screen), pos


# ---------------------------------------------------------------------------
# extract_roll / roll_for_viewpoint


def test_extract_roll_round_trip():
    for yaw, tilt, roll in [(0.3, 0.2, 0.37), (-1.2, -0.6, -0.9), (2.8, 1.1, 0.0)]:
        x_c, y_c, _ = camera_axes(yaw, tilt, roll)
        assert extract_roll(x_c, y_c) == pytest.approx(roll, abs=1e-12)


def test_extract_roll_vertical_view_rejected():
    x_c, y_c, _ = camera_axes(0.0, np.pi / 2, 0.0)
    with pytest.raises(ValueError):
        extract_roll(x_c, y_c)


def test_roll_zero_for_symmetric_apex_framing(pair_surface):
    # camera on the horizontal apex locus, same-height targets, symmetric
    # desired points: the mirror symmetry leaves no roll to apply
    pos = pair_surface.dts_to_world(0.0, 0.5)
    # seen from the positive-theta side, the first target sits screen-right
    tan = 0.35
    framing = FramingSpec(_targets(pair_surface), [(tan, 0.0), (-tan, 0.0)])
    assert abs(roll_for_viewpoint(pos, framing)) < 1e-9


def test_roll_nonzero_for_vertically_skewed_framing(pair_surface):
    pos = pair_surface.dts_to_world(0.0, 0.5)
    framing = FramingSpec(_targets(pair_surface), [(0.35, 0.25), (-0.35, -0.25)])
    assert abs(roll_for_viewpoint(pos, framing)) > 1e-3


def test_roll_matches_construction(pair_surface):
    # screen points projected through a deliberately rolled camera must be
    # attributed exactly that roll
    rng = np.random.default_rng(11)
    targets = _targets(pair_surface)
    for _ in range(100):
        phi = rng.uniform(-0.9, 0.9)
        theta = rng.uniform(0.3, 0.7) * rng.choice([-1.0, 1.0])
        pos = pair_surface.dts_to_world(phi, theta)
        aim = feasible_orientation(pos, FramingSpec.centered(targets), refine=False)
        roll0 = rng.uniform(-1.0, 1.0)
        pose = CameraPose(pos, aim.yaw, aim.tilt, roll0)
        screen = [project_point(p, pose) for p in targets]
        if any(s is None for s in screen):
            continue
        framing = FramingSpec(targets, screen)
        assert roll_for_viewpoint(pos, framing) == pytest.approx(roll0, abs=1e-9)


def _framing_error(pos, framing, yaw, tilt, roll):
    pose = CameraPose(np.asarray(pos), yaw, tilt, roll)
    err = 0.0
    for p, want in zip(framing.points, framing.screen):
        got = project_point(p, pose)
        if got is None:
            return 10.0
        err += (got[0] - want[0]) ** 2 + (got[1] - want[1]) ** 2
    return err


def test_roll_matches_free_orientation_minimum(pair_surface):
    # independent check: minimizing framing error over all yaw/tilt/roll
    # orientations lands on the same roll magnitude
    rng = np.random.default_rng(7)
    targets = _targets(pair_surface)
    checked = 0
    for _ in range(200):
        if checked >= 100:
            break
        phi = rng.uniform(-0.85, 0.85)
        theta = rng.uniform(0.3, 0.7) * rng.choice([-1.0, 1.0])
        pos = pair_surface.dts_to_world(phi, theta)
        aim = feasible_orientation(pos, FramingSpec.centered(targets), refine=False)
        roll0 = rng.uniform(-0.9, 0.9)
        pose = CameraPose(pos, aim.yaw, aim.tilt, roll0)
        screen = [project_point(p, pose) for p in targets]
        if any(s is None for s in screen):
            continue
        framing = FramingSpec(targets, screen)
        got = roll_for_viewpoint(pos, framing)
        res = minimize(
            lambda v: _framing_error(pos, framing, v[0], v[1], v[2]),
            x0=[aim.yaw + 0.05, aim.tilt - 0.05, roll0 + 0.1],
            method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 2000},
        )
        assert abs(abs(got) - abs(res.x[2])) < 1e-3
        checked += 1
    assert checked == 100


def test_roll_rejects_parallel_directions(pair_surface):
    targets = _targets(pair_surface)
    # point on the axis through both targets sees them in one direction
    pos = targets[0] - np.array([3.0, 0.0, 0.0])
    framing = FramingSpec(targets, [(0.0, 0.0), (0.1, 0.0)])
    with pytest.raises(ValueError):
        roll_for_viewpoint(pos, framing)


# ---------------------------------------------------------------------------
# view-angle orbit


def test_view_angle_zero_delta_is_identity(pair_surface):
    res = manipulate_view_angle(pair_surface, (0.2, 0.5), (0.0, 0.0))
    assert np.allclose(res.position, pair_surface.dts_to_world(0.2, 0.5))
    assert not res.substituted and not res.clamped


def test_view_angle_orbit_reversible(pair_surface):
    rng = np.random.default_rng(3)
    for _ in range(50):
        start = (rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9))
        delta = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
        fwd = manipulate_view_angle(pair_surface, start, delta)
        if fwd.clamped:
            continue
        back = manipulate_view_angle(pair_surface, (fwd.phi, fwd.theta), (-delta[0], -delta[1]))
        assert abs(back.phi - start[0]) < 1e-6
        assert abs(back.theta - start[1]) < 1e-6
        ref, _ = view_angle_position(pair_surface, *start)
        assert np.linalg.norm(back.position - ref) < 1e-6


def test_view_angle_preserves_subtended_angle_off_substitution(pair_surface):
    res = manipulate_view_angle(pair_surface, (0.1, 0.45), (0.25, 0.1))
    assert not res.substituted
    a, b = _targets(pair_surface)
    got = subtended_alpha(res.position[None, :], a, b)[0]
    assert got == pytest.approx(pair_surface.alpha, abs=1e-9)


def test_view_angle_alignment_drag_uses_plane_cap(pair_surface):
    res = manipulate_view_angle(pair_surface, (0.3, 0.6), (0.0, 0.38))
    assert res.substituted
    # output sits on the vertical plane of the convex substitute's cap
    x_local = float(np.dot(res.position - pair_surface.origin, pair_surface.ex))
    assert x_local == pytest.approx(1.0 - pair_surface.r, abs=1e-9)


def test_view_angle_substitution_is_c1(pair_surface):
    # walking the orbit across the substitution boundary must not kink
    phi = 0.35
    thetas = np.linspace(0.76, 0.9, 141)
    pts = np.array([view_angle_position(pair_surface, phi, t)[0] for t in thetas])
    steps = np.diff(pts, axis=0)
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    turn = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", steps[:-1], steps[1:]), -1, 1)))
    assert np.max(turn) < 0.5


def test_view_angle_substituted_orbit_stays_safe(pair_surface):
    a, b = _targets(pair_surface)
    for theta in np.linspace(-1.0, 1.0, 201):
        p, _ = view_angle_position(pair_surface, 0.35, float(theta))
        assert min(np.linalg.norm(p - a), np.linalg.norm(p - b)) >= 0.4 - 1e-9


def test_view_angle_clamps_at_chart_bounds(pair_surface):
    res = manipulate_view_angle(pair_surface, (0.9, 0.5), (0.5, 0.0))
    assert res.clamped and res.phi == 1.0


@settings(max_examples=40, deadline=None)
@given(
    phi0=st.floats(-0.8, 0.8),
    theta0=st.floats(-0.8, 0.8),
    dphi=st.floats(-0.19, 0.19),
    dtheta=st.floats(-0.19, 0.19),
)
def test_view_angle_reversibility_property(phi0, theta0, dphi, dtheta):
    a = Target(np.array([0.0, 0.0, 1.0]))
    b = Target(np.array([2.0, 0.0, 1.0]))
    surf = build_surface([a, b], alpha=np.pi / 6, d_s=0.4)
    fwd = manipulate_view_angle(surf, (phi0, theta0), (dphi, dtheta))
    back = manipulate_view_angle(surf, (fwd.phi, fwd.theta), (-dphi, -dtheta))
    assert abs(back.phi - phi0) < 1e-6
    assert abs(back.theta - theta0) < 1e-6


# ---------------------------------------------------------------------------
# search curves


def test_external_curve_is_two_lines():
    curve = build_search_curve(None, (0.2, 0.1), ())
    assert [s.kind for s in curve.segments] == ["line", "line"]
    assert sorted(s.theta for s in curve.segments) == [-0.1, 0.1]
    assert curve.region == RegionLabel.EXTERNAL_B


def test_apex_curve_symmetric_and_through_start():
    start = (-0.3, -0.5)
    curve = build_search_curve(None, start, ())
    assert curve.region == RegionLabel.APEX
    samples = curve.sample(128)
    d = np.min(np.linalg.norm(samples - np.array(start), axis=1))
    assert d < 2e-3
    # mirror image under theta -> -theta lands back on the curve
    for p in samples[::13]:
        refl = np.array([p[0], -p[1]])
        assert np.min(np.linalg.norm(samples - refl, axis=1)) < 2e-2


def test_apex_curve_confined_to_region_interval():
    curve = build_search_curve(None, (-0.3, 0.52), ())
    lo, hi = curve.theta_bounds
    region = camera_region(0.52)
    assert lo >= region.lo - 1e-12 and hi <= region.hi + 1e-12
    for p in curve.sample(256):
        assert lo - 1e-9 <= abs(p[1]) <= hi + 1e-9


def test_apex_curve_c1_at_segment_joins(pair_surface):
    # joins must be smooth on the surface itself; the chart reverses at a
    # fold crossing, so compare world-space tangents
    curve = build_search_curve(None, (-0.4, 0.52), ())
    eps = 1e-6

    def world(seg, t):
        return pair_surface.dts_to_world(*curve.segments[seg].eval(t))

    for i in range(len(curve.segments)):
        j = (i + 1) % len(curve.segments)
        end_at = world(i, 1.0)
        start_at = world(j, 0.0)
        assert np.linalg.norm(end_at - start_at) < 1e-9
        t1 = (end_at - world(i, 1.0 - eps)) / eps
        t2 = (world(j, eps) - start_at) / eps
        c = np.dot(t1, t2) / (np.linalg.norm(t1) * np.linalg.norm(t2))
        assert c > 1.0 - 1e-6
        assert np.linalg.norm(t1) == pytest.approx(np.linalg.norm(t2), rel=1e-3)


def test_apex_curve_meets_fold_orthogonally():
    curve = build_search_curve(None, (-0.4, 0.52), ())
    # the half-ellipse end points touch phi = -1 moving purely in phi
    seg = curve.segments[1]
    p_end = np.array(seg.eval(1.0))
    assert p_end[0] == pytest.approx(-1.0, abs=1e-12)
    tang = p_end - np.array(seg.eval(1.0 - 1e-6))
    assert abs(tang[1]) < 1e-6 * abs(tang[0])


def test_curve_family_closed_under_motion():
    start = (-0.4, 0.52)
    curve = build_search_curve(None, start, ())
    def family(c):
        return sorted({(s.center, round(s.a, 9), s.b) for s in c.segments})

    for seg, t in [(0, 0.3), (1, 0.7), (2, 0.5), (3, 0.2)]:
        p = curve.eval(seg, t)
        again = build_search_curve(None, p, ())
        assert family(again) == family(curve)


def test_edge_starts_fall_back_to_lines():
    # starts hugging the region's theta edge cannot host the ellipse family
    curve = build_search_curve(None, (-0.2, 0.6245), ())
    assert all(s.kind == "line" for s in curve.segments)
    # near-equator starts far from the region center would need an ellipse
    # poking through the equator; they take the lines too
    curve2 = build_search_curve(None, (-0.1, 0.575), ())
    assert all(s.kind == "line" for s in curve2.segments)


def test_curve_skirts_keep_out_ellipse(pair_surface):
    ells = floor_ceiling_ellipses(pair_surface, floor_z=-1.2)
    assert ells and all(e.approximate for e in ells)
    curve = build_search_curve(None, (-0.4, 0.52), tuple(ells))
    samples = curve.sample(256)
    inside = [p for p in samples for e in ells if e.level(p[0], p[1]) < 1.0 - 1e-9]
    assert not inside
    touches = any(abs(e.level(p[0], p[1]) - 1.0) < 1e-6 for p in samples for e in ells)
    assert touches


def test_floor_ellipses_empty_when_bounds_clear(pair_surface):
    assert floor_ceiling_ellipses(pair_surface, floor_z=-50.0, ceiling_z=50.0) == []


# ---------------------------------------------------------------------------
# position manipulation


def test_position_current_framing_is_fixed_point(pair_surface):
    start = (-0.4, 0.52)
    framing, _ = _framing_at(pair_surface, *start)
    res = manipulate_position(pair_surface, start, framing)
    assert abs(res.phi - start[0]) < 1e-6
    assert abs(res.theta - start[1]) < 1e-6


def test_position_round_trip(pair_surface):
    start = (-0.4, 0.52)
    framing_back, _ = _framing_at(pair_surface, *start)
    framing_fwd = FramingSpec(_targets(pair_surface), [(-0.35, 0.1), (0.4, 0.05)])
    fwd = manipulate_position(pair_surface, start, framing_fwd)
    back = manipulate_position(pair_surface, (fwd.phi, fwd.theta), framing_back)
    assert abs(back.phi - start[0]) < 1e-3
    assert abs(back.theta - start[1]) < 1e-3


def test_position_beats_dense_curve_sampling(pair_surface):
    rng = np.random.default_rng(5)
    for _ in range(5):
        theta0 = rng.uniform(0.4, 0.6) * rng.choice([-1.0, 1.0])
        start = (rng.uniform(-0.8, -0.1), theta0)
        framing = FramingSpec(
            _targets(pair_surface),
            [tuple(rng.uniform(-0.5, 0.5, 2)), tuple(rng.uniform(-0.5, 0.5, 2))],
        )
        res = manipulate_position(pair_surface, start, framing)
        curve = build_search_curve(None, start, ())
        best = np.inf
        for seg in range(len(curve.segments)):
            for t in np.linspace(0.0, 1.0, 2500):
                phi, theta = curve.eval(seg, float(t))
                pos = pair_surface.dts_to_world(phi, theta)
                try:
                    r = abs(roll_for_viewpoint(pos, framing))
                except ValueError:
                    continue
                best = min(best, r)
        assert abs(res.roll) <= best + 1e-4


def test_position_stays_in_start_region(pair_surface):
    rng = np.random.default_rng(9)
    for _ in range(20):
        theta0 = float(rng.uniform(0.05, 0.95)) * float(rng.choice([-1.0, 1.0]))
        start = (float(rng.uniform(-0.9, 0.9)), theta0)
        framing = FramingSpec(
            _targets(pair_surface),
            [tuple(rng.uniform(-0.5, 0.5, 2)), tuple(rng.uniform(-0.5, 0.5, 2))],
        )
        res = manipulate_position(pair_surface, start, framing)
        want = camera_region(theta0).label
        got = camera_region(res.theta).label
        lo, hi = camera_region(theta0).lo, camera_region(theta0).hi
        on_edge = abs(abs(res.theta) - lo) < 1e-9 or abs(abs(res.theta) - hi) < 1e-9
        assert got == want or on_edge


def test_position_deterministic(pair_surface):
    start = (-0.4, 0.52)
    framing = FramingSpec(_targets(pair_surface), [(-0.3, 0.2), (0.3, -0.1)])
    r1 = manipulate_position(pair_surface, start, framing)
    r2 = manipulate_position(pair_surface, start, framing)
    assert r1.phi == r2.phi and r1.theta == r2.theta
    assert np.array_equal(r1.position, r2.position)


# ---------------------------------------------------------------------------
# dolly and world moves


def test_dolly_identity_and_round_trip():
    pos = np.array([0.0, -3.0, 1.5])
    target = np.zeros(3)
    same, clamped = manipulate_dolly(pos, target, 0.0, d_s=0.4)
    assert np.allclose(same, pos) and not clamped
    fwd, c1 = manipulate_dolly(pos, target, -1.0, d_s=0.4)
    back, c2 = manipulate_dolly(fwd, target, 1.0, d_s=0.4)
    assert not c1 and not c2
    assert np.linalg.norm(back - pos) < 1e-12


def test_dolly_clamps_at_safety_distance():
    pos = np.array([0.0, -3.0, 0.0])
    target = np.zeros(3)
    near, clamped = manipulate_dolly(pos, target, -(3.0 - 0.4) - 0.5, d_s=0.4)
    assert clamped
    assert np.linalg.norm(near - target) == pytest.approx(0.4)


def test_world_manipulator_inverses():
    pose = CameraPose(np.array([1.0, 2.0, 3.0]), 0.7, 0.2)
    for kind, delta in [("truck", 0.8), ("pedestal", -0.5), ("forward", 1.2), ("pan", 0.4)]:
        fwd = world_manipulator(pose, kind, delta)
        back = world_manipulator(fwd, kind, -delta)
        assert np.allclose(back.position, pose.position, atol=1e-12)
        assert back.yaw == pytest.approx(pose.yaw)
    assert world_manipulator(pose, "truck", 0.0).position == pytest.approx(pose.position)


def test_world_manipulator_tilt_clamped():
    pose = CameraPose(np.zeros(3), 0.0, 1.4)
    res = world_manipulator(pose, "tilt", 1.0)
    assert res.tilt == pytest.approx(np.pi / 2 - 0.05)
    with pytest.raises(ValueError):
        world_manipulator(pose, "zoom", 1.0)


# ---------------------------------------------------------------------------
# collision avoidance on the anchor half-line


def _open_scene():
    return SceneModel(
        bounds=Aabb(np.array([-10.0, -10.0, 0.0]), np.array([10.0, 10.0, 5.0])),
        primitives=[],
    )


def test_avoid_no_obstacles_returns_desired():
    scene = _open_scene()
    desired = np.array([0.0, -3.0, 1.0])
    got, adjusted = avoid_collision(desired, np.zeros(3) + [0, 0, 1], scene, desired, d_s=0.4)
    assert np.allclose(got, desired) and not adjusted


def test_avoid_sphere_pushes_to_near_edge():
    scene = _open_scene()
    scene.primitives.append(SphereObstacle(np.array([0.0, -2.0, 1.0]), 0.5))
    anchor = np.array([0.0, 0.0, 1.0])
    desired = np.array([0.0, -2.0, 1.0])
    previous = np.array([0.0, -1.8, 1.0])
    got, adjusted = avoid_collision(desired, anchor, scene, previous, d_s=0.4)
    assert adjusted
    # one-dimensional picture along -y: blocked 1.5..2.5, previous at 1.8,
    # so the free point closest to previous is the near edge
    assert np.allclose(got, [0.0, -1.5, 1.0], atol=1e-9)
    # previous deep inside the blocked stretch but past its midpoint: the
    # far edge is the closer escape
    far, _ = avoid_collision(desired, anchor, scene, np.array([0.0, -2.2, 1.0]), d_s=0.4)
    assert np.allclose(far, [0.0, -2.5, 1.0], atol=1e-9)
    # previous already in free space stays put
    free_prev = np.array([0.0, -2.7, 1.0])
    same, _ = avoid_collision(desired, anchor, scene, free_prev, d_s=0.4)
    assert np.allclose(same, free_prev, atol=1e-9)


def test_avoid_returns_hold_when_fully_blocked():
    scene = _open_scene()
    scene.primitives.append(BoxObstacle(np.array([-5.0, -10.0, 0.0]), np.array([5.0, 0.0, 5.0])))
    anchor = np.array([0.0, 0.0, 1.0])
    got, adjusted = avoid_collision(np.array([0.0, -3.0, 1.0]), anchor, scene, np.array([0.0, -2.0, 1.0]), d_s=0.4)
    assert got is None and adjusted


def test_avoid_outputs_clear_of_obstacles_and_bounds():
    rng = np.random.default_rng(21)
    for _ in range(100):
        scene = _open_scene()
        for _ in range(rng.integers(0, 4)):
            scene.primitives.append(
                SphereObstacle(rng.uniform(-6, 6, 3) * [1, 1, 0.3] + [0, 0, 2], rng.uniform(0.3, 1.5))
            )
        for _ in range(rng.integers(0, 3)):
            lo = rng.uniform(-6, 4, 3) * [1, 1, 0.3] + [0, 0, 1]
            scene.primitives.append(BoxObstacle(lo, lo + rng.uniform(0.5, 3.0, 3)))
        anchor = rng.uniform(-4, 4, 3) * [1, 1, 0.2] + [0, 0, 2]
        desired = anchor + rng.normal(size=3) * 3.0
        if np.linalg.norm(desired - anchor) < 0.5:
            continue
        previous = anchor + rng.normal(size=3) * 2.0
        got, _ = avoid_collision(desired, anchor, scene, previous, d_s=0.4, clearance=0.05)
        if got is None:
            continue
        assert scene.bounds.contains(got)
        for prim in scene.primitives:
            assert prim.distance(got) >= 0.05 - 1e-6
        assert np.linalg.norm(got - anchor) >= 0.4 - 1e-9


def test_avoid_rejects_coincident_anchor():
    scene = _open_scene()
    p = np.array([1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        avoid_collision(p, p, scene, p, d_s=0.4)
