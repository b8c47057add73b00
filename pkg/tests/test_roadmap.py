"""Roadmap construction, visibility sampling, and dynamic tagging."""

import numpy as np
import pytest

from cinedrone.geometry import Aabb, BoxObstacle, Frustum, SceneModel, SphereObstacle
from cinedrone.roadmap import (
    Roadmap,
    RoadmapParams,
    build_roadmap,
    clearance_batch,
    load_roadmap,
    pair_occlusion,
    precompute_visibility,
    reachability_prune,
    save_roadmap,
    scene_fingerprint,
    sphere_components,
    sphere_containing,
    update_dynamic,
    visibility_column,
)

BOX_BOUNDS = Aabb(np.array([0.0, 0.0, 0.0]), np.array([10.0, 10.0, 4.0]))


def _empty_scene():
    return SceneModel(bounds=BOX_BOUNDS, primitives=[])


def _wall_scene(doorway=False):
    prims = []
    if doorway:
        prims.append(BoxObstacle(np.array([4.8, 0.0, 0.0]), np.array([5.2, 4.5, 4.0])))
        prims.append(BoxObstacle(np.array([4.8, 5.5, 0.0]), np.array([5.2, 10.0, 4.0])))
    else:
        prims.append(BoxObstacle(np.array([4.8, 0.0, 0.0]), np.array([5.2, 10.0, 4.0])))
    return SceneModel(bounds=BOX_BOUNDS, primitives=prims)


TIGHT = RoadmapParams(min_radius=0.2, max_spheres=900, drone_radius=0.1, margin=0.05)


@pytest.fixture(scope="module")
def empty_roadmap():
    return build_roadmap(_empty_scene(), RoadmapParams(min_radius=0.5, max_spheres=400))


@pytest.fixture(scope="module")
def wall_roadmap():
    return build_roadmap(_wall_scene(), TIGHT)


@pytest.fixture(scope="module")
def doorway_roadmap():
    return build_roadmap(_wall_scene(doorway=True), TIGHT)


# ---------------------------------------------------------------------------
# construction


def test_empty_box_single_component(empty_roadmap):
    labels = sphere_components(empty_roadmap)
    assert len(np.unique(labels)) == 1
    assert empty_roadmap.node_count > 0


def test_full_wall_two_components(wall_roadmap):
    labels = sphere_components(wall_roadmap)
    assert len(np.unique(labels)) == 2
    # the two components sit on opposite sides of the wall
    side = wall_roadmap.sphere_centers[:, 0] > 5.0
    assert len(np.unique(labels[side])) == 1
    assert len(np.unique(labels[~side])) == 1


def test_doorway_reconnects_and_hosts_a_portal(doorway_roadmap):
    labels = sphere_components(doorway_roadmap)
    assert len(np.unique(labels)) == 1
    pc = doorway_roadmap.portal_centers
    in_door = (
        (pc[:, 0] > 4.6) & (pc[:, 0] < 5.4) & (pc[:, 1] > 4.5) & (pc[:, 1] < 5.5)
    )
    assert np.any(in_door)


def test_sphere_interiors_obstacle_free():
    rng = np.random.default_rng(2)
    for scene, rm_params in [
        (_wall_scene(), TIGHT),
        (_wall_scene(doorway=True), TIGHT),
    ]:
        rm = build_roadmap(scene, rm_params)
        picks = rng.integers(0, len(rm.sphere_centers), size=10_000)
        dirs = rng.normal(size=(10_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = rm.sphere_radii[picks] * rng.uniform(0, 1, 10_000) ** (1 / 3)
        pts = rm.sphere_centers[picks] + dirs * rad[:, None]
        clear = clearance_batch(pts, scene.primitives, scene.bounds)
        assert np.min(clear) > 0.0


def test_portal_disks_are_intersection_circles(empty_roadmap):
    rm = empty_roadmap
    for k in range(rm.node_count):
        i, j = rm.portal_spheres[k]
        for s in (i, j):
            d = np.linalg.norm(rm.portal_centers[k] - rm.sphere_centers[s])
            assert d * d + rm.portal_radii[k] ** 2 == pytest.approx(
                rm.sphere_radii[s] ** 2, rel=1e-9
            )
        axis = rm.sphere_centers[j] - rm.sphere_centers[i]
        axis /= np.linalg.norm(axis)
        assert abs(np.dot(axis, rm.portal_normals[k])) == pytest.approx(1.0)


def test_arcs_live_inside_their_owning_sphere(empty_roadmap):
    rm = empty_roadmap
    for (u, v), s, length in zip(rm.arcs, rm.arc_sphere, rm.arc_lengths):
        assert s in rm.portal_spheres[u] and s in rm.portal_spheres[v]
        assert length == pytest.approx(
            np.linalg.norm(rm.portal_centers[u] - rm.portal_centers[v])
        )


def test_zero_free_space_rejected():
    scene = SceneModel(
        bounds=Aabb(np.zeros(3), np.array([2.0, 2.0, 2.0])),
        primitives=[BoxObstacle(np.array([-1.0, -1, -1]), np.array([3.0, 3, 3]))],
    )
    with pytest.raises(ValueError):
        build_roadmap(scene, RoadmapParams(min_radius=0.3))


def test_sphere_containing(empty_roadmap):
    rm = empty_roadmap
    idx = sphere_containing(rm, rm.sphere_centers[3])
    assert idx == 3


# ---------------------------------------------------------------------------
# visibility


def test_visibility_zero_between_overlapping_spheres_in_empty_scene(empty_roadmap):
    scene = _empty_scene()
    i, j = empty_roadmap.portal_spheres[0]
    assert pair_occlusion(empty_roadmap, scene, int(i), int(j), rays=64) == 0.0


def test_visibility_one_through_solid_wall(wall_roadmap):
    scene = _wall_scene()
    left = int(np.argmin(wall_roadmap.sphere_centers[:, 0]))
    right = int(np.argmax(wall_roadmap.sphere_centers[:, 0]))
    assert pair_occlusion(wall_roadmap, scene, left, right, rays=64) == 1.0


def test_partial_occlusion_matches_dense_oracle():
    scene = SceneModel(
        bounds=BOX_BOUNDS,
        primitives=[BoxObstacle(np.array([4.9, 0.0, 0.0]), np.array([5.1, 10.0, 2.0]))],
    )
    rm = build_roadmap(scene, RoadmapParams(min_radius=0.4, max_spheres=300))
    c = rm.sphere_centers
    left = int(np.argmin(np.linalg.norm(c - [3.5, 5.0, 2.0], axis=1)))
    right = int(np.argmin(np.linalg.norm(c - [6.5, 5.0, 2.0], axis=1)))
    coarse = pair_occlusion(rm, scene, left, right, rays=256)
    dense = pair_occlusion(rm, scene, left, right, rays=25_600)
    assert 0.0 < coarse < 1.0
    assert abs(coarse - dense) < 0.05


def test_visibility_table_symmetric_zero_diagonal():
    scene = _empty_scene()
    rm = build_roadmap(scene, RoadmapParams(min_radius=1.0, max_spheres=12))
    table = precompute_visibility(rm, scene, rays_per_pair=16)
    assert np.allclose(table, table.T)
    assert np.all(np.diag(table) == 0.0)
    col = visibility_column(rm, scene, 0)
    assert np.array_equal(col, table[:, 0])


# ---------------------------------------------------------------------------
# dynamic tags


def test_update_dynamic_far_obstacle_no_delta(empty_roadmap):
    changed = update_dynamic(empty_roadmap, [], [])
    assert changed.size == 0
    far = SphereObstacle(np.array([100.0, 100.0, 100.0]), 0.5)
    changed = update_dynamic(empty_roadmap, [far], [])
    assert changed.size == 0


def test_update_dynamic_obstacle_on_portal_blocks_it(empty_roadmap):
    rm = empty_roadmap
    ob = SphereObstacle(rm.portal_centers[0].copy(), 0.3)
    changed = update_dynamic(rm, [ob], [])
    assert 0 in changed
    assert rm.blocked_obstacle[0]
    # idempotent: same set again changes nothing
    assert update_dynamic(rm, [ob], []).size == 0
    # reversible: removing the obstacle restores the static graph
    changed = update_dynamic(rm, [], [])
    assert 0 in changed
    assert not rm.blocked_obstacle.any()


def test_update_dynamic_frustum_matches_pointwise_oracle(empty_roadmap):
    rm = empty_roadmap
    for apex_x in (1.0, 4.0, 7.0):
        f = Frustum(
            apex=np.array([apex_x, 5.0, 2.0]),
            forward=np.array([1.0, 0.0, 0.0]),
            right=np.array([0.0, -1.0, 0.0]),
            up=np.array([0.0, 0.0, 1.0]),
            tan_h=0.6,
            tan_v=0.4,
            far=5.0,
        )
        update_dynamic(rm, [], [f])
        expect = np.array([f.contains(p) for p in rm.portal_centers])
        assert np.array_equal(rm.blocked_frustum, expect)
    update_dynamic(rm, [], [])
    assert not rm.blocked_frustum.any()


def test_traversable_combines_flags(empty_roadmap):
    rm = empty_roadmap
    assert rm.traversable.all()
    rm.unreachable[2] = True
    assert not rm.traversable[2]
    rm.unreachable[2] = False


# ---------------------------------------------------------------------------
# reachability


def test_reachability_at_rest_tags_nothing(empty_roadmap):
    changed = reachability_prune(empty_roadmap, np.array([5.0, 5.0, 2.0]), np.zeros(3), 2.0, 2.0)
    assert not empty_roadmap.unreachable.any()
    assert changed.size == 0


def test_reachability_braking_zone(empty_roadmap):
    rm = empty_roadmap
    pos = np.array([5.0, 5.0, 2.0])
    vel = np.array([2.0, 0.0, 0.0])  # stopping distance 1 m at amax=2
    reachability_prune(rm, pos, vel, vmax=2.0, amax=2.0)
    rel = rm.portal_centers - pos
    dist = np.linalg.norm(rel, axis=1)
    behind = rel[:, 0] < 0
    for k in range(rm.node_count):
        want = bool(behind[k] and dist[k] <= 1.0)
        assert rm.unreachable[k] == want
    assert rm.unreachable.any()
    # ahead-only zone clears once the drone turns around
    reachability_prune(rm, pos, -vel, vmax=2.0, amax=2.0)
    assert not rm.unreachable[(rel[:, 0] < -1.0)].any()
    reachability_prune(rm, pos, np.zeros(3), 2.0, 2.0)
    assert not rm.unreachable.any()


# ---------------------------------------------------------------------------
# cache


def test_cache_round_trip(tmp_path, empty_roadmap):
    scene = _empty_scene()
    params = RoadmapParams(min_radius=0.5, max_spheres=400)
    path = tmp_path / "roadmap.npz"
    save_roadmap(path, empty_roadmap)
    back = load_roadmap(path, scene_fingerprint(scene, params))
    assert back is not None
    assert np.array_equal(back.sphere_centers, empty_roadmap.sphere_centers)
    assert np.array_equal(back.arcs, empty_roadmap.arcs)
    assert load_roadmap(path, "deadbeef") is None
    assert load_roadmap(tmp_path / "missing.npz", "x") is None
