"""Sphere-sampled free-space roadmap with portal nodes.

Free space gets covered by obstacle-free spheres (greedy largest-empty-sphere
insertion over a candidate grid). Overlapping spheres meet in a disk, the
portal; portals are the graph nodes, and every portal pair sharing a sphere
is an arc. Pairwise sphere visibility is ray-sampled once and reused as a
soft path-cost weight. Dynamic state (obstacles, camera frustums, short-term
reachability) lives in per-node boolean tags that never touch the static
geometry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Aabb,
    BoxObstacle,
    SceneModel,
    SphereObstacle,
    TriangleObstacle,
    segments_blocked_batch,
)


@dataclass(frozen=True)
class RoadmapParams:
    min_radius: float = 0.5
    max_spheres: int = 2000
    drone_radius: float = 0.25
    margin: float = 0.1
    max_radius: float = np.inf
    grid_spacing: float | None = None

    @property
    def inflation(self) -> float:
        return self.drone_radius + self.margin


@dataclass
class Roadmap:
    sphere_centers: np.ndarray  # (S, 3)
    sphere_radii: np.ndarray  # (S,)
    portal_centers: np.ndarray  # (N, 3)
    portal_normals: np.ndarray  # (N, 3)
    portal_radii: np.ndarray  # (N,)
    portal_spheres: np.ndarray  # (N, 2) sphere indices
    arcs: np.ndarray  # (E, 2) portal indices
    arc_lengths: np.ndarray  # (E,)
    arc_sphere: np.ndarray  # (E,) shared sphere per arc
    scene_hash: str = ""
    visibility: np.ndarray | None = None  # (S, S) occlusion in [0, 1]
    blocked_obstacle: np.ndarray = field(default=None)  # (N,) bool
    blocked_frustum: np.ndarray = field(default=None)
    unreachable: np.ndarray = field(default=None)
    # CSR adjacency over portal nodes, filled in __post_init__
    adj_indptr: np.ndarray = field(default=None)
    adj_indices: np.ndarray = field(default=None)
    adj_arc: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.portal_centers)
        if self.blocked_obstacle is None:
            self.blocked_obstacle = np.zeros(n, dtype=bool)
        if self.blocked_frustum is None:
            self.blocked_frustum = np.zeros(n, dtype=bool)
        if self.unreachable is None:
            self.unreachable = np.zeros(n, dtype=bool)
        if self.adj_indptr is None:
            self._build_adjacency()

    def _build_adjacency(self):
        n = len(self.portal_centers)
        e = len(self.arcs)
        heads = np.concatenate([self.arcs[:, 0], self.arcs[:, 1]]) if e else np.zeros(0, int)
        tails = np.concatenate([self.arcs[:, 1], self.arcs[:, 0]]) if e else np.zeros(0, int)
        arc_ids = np.concatenate([np.arange(e), np.arange(e)]) if e else np.zeros(0, int)
        order = np.argsort(heads, kind="stable")
        heads, tails, arc_ids = heads[order], tails[order], arc_ids[order]
        self.adj_indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.adj_indptr, heads + 1, 1)
        np.cumsum(self.adj_indptr, out=self.adj_indptr)
        self.adj_indices = tails.astype(np.int64)
        self.adj_arc = arc_ids.astype(np.int64)

    @property
    def node_count(self) -> int:
        return len(self.portal_centers)

    @property
    def traversable(self) -> np.ndarray:
        return ~(self.blocked_obstacle | self.blocked_frustum | self.unreachable)

    def neighbors(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor node ids, arc ids) of a portal node."""
        lo, hi = self.adj_indptr[node], self.adj_indptr[node + 1]
        return self.adj_indices[lo:hi], self.adj_arc[lo:hi]


# ---------------------------------------------------------------------------
# Vectorized clearance over candidate points


def _point_box_signed(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    below = lo - points
    above = points - hi
    outside = np.maximum(np.maximum(below, above), 0.0)
    d_out = np.linalg.norm(outside, axis=1)
    d_in = -np.min(np.minimum(points - lo, hi - points), axis=1)
    return np.where(d_out > 0, d_out, d_in)


def _point_segment_distance_batch(points, a, b) -> np.ndarray:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _point_triangle_distance_batch(points, a, b, c) -> np.ndarray:
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n)
    if nn < 1e-18:
        return _point_segment_distance_batch(points, a, b)
    n = n / nn
    d_plane = (points - a) @ n
    proj = points - d_plane[:, None] * n
    # barycentric test on the projected points
    v0, v1 = b - a, c - a
    v2 = proj - a
    d00, d01, d11 = np.dot(v0, v0), np.dot(v0, v1), np.dot(v1, v1)
    d20, d21 = v2 @ v0, v2 @ v1
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    edge = np.minimum(
        _point_segment_distance_batch(points, a, b),
        np.minimum(
            _point_segment_distance_batch(points, b, c),
            _point_segment_distance_batch(points, c, a),
        ),
    )
    return np.where(inside, np.abs(d_plane), edge)


def clearance_batch(points: np.ndarray, primitives, bounds: Aabb | None = None) -> np.ndarray:
    """Distance from each point to the nearest obstacle or bounds wall."""
    points = np.asarray(points, dtype=float)
    best = np.full(len(points), np.inf)
    if bounds is not None:
        wall = np.min(np.minimum(points - bounds.lo, bounds.hi - points), axis=1)
        best = np.minimum(best, wall)
    for prim in primitives:
        if isinstance(prim, SphereObstacle):
            d = np.linalg.norm(points - prim.center, axis=1) - prim.radius
        elif isinstance(prim, BoxObstacle):
            d = _point_box_signed(points, prim.lo, prim.hi)
        elif isinstance(prim, TriangleObstacle):
            d = _point_triangle_distance_batch(points, prim.a, prim.b, prim.c)
        else:
            d = np.array([prim.distance(p) for p in points])
        best = np.minimum(best, d)
    return best


# ---------------------------------------------------------------------------
# Construction


def scene_fingerprint(scene: SceneModel, params: RoadmapParams) -> str:
    """Content hash used to reject stale roadmap caches."""
    h = hashlib.sha256()
    h.update(np.asarray(scene.bounds.lo, dtype=float).tobytes())
    h.update(np.asarray(scene.bounds.hi, dtype=float).tobytes())
    for prim in scene.primitives:
        h.update(type(prim).__name__.encode())
        if isinstance(prim, SphereObstacle):
            h.update(np.asarray(prim.center, float).tobytes())
            h.update(np.float64(prim.radius).tobytes())
        elif isinstance(prim, BoxObstacle):
            h.update(np.asarray(prim.lo, float).tobytes())
            h.update(np.asarray(prim.hi, float).tobytes())
        elif isinstance(prim, TriangleObstacle):
            for v in (prim.a, prim.b, prim.c):
                h.update(np.asarray(v, float).tobytes())
    for val in (params.min_radius, params.max_spheres, params.drone_radius,
                params.margin, params.max_radius, params.grid_spacing or 0.0):
        h.update(np.float64(val).tobytes())
    return h.hexdigest()


def build_roadmap(scene: SceneModel, params: RoadmapParams | None = None) -> Roadmap:
    """Cover free space with spheres and derive portals and arcs.

    Greedy insertion: among grid candidates not yet inside any sphere, take
    the one with the largest obstacle clearance and plant a sphere of that
    clearance there; stop at max_spheres or when the leftover candidates
    all have clearance below min_radius.
    """
    params = params or RoadmapParams()
    spacing = params.grid_spacing or params.min_radius
    lo, hi = scene.bounds.lo, scene.bounds.hi
    axes = [np.arange(lo[d] + spacing / 2.0, hi[d], spacing) for d in range(3)]
    if any(len(ax) == 0 for ax in axes):
        raise ValueError("scene bounds too small for the candidate grid")
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    clear = clearance_batch(grid, scene.primitives, scene.bounds) - params.inflation
    clear = np.minimum(clear, params.max_radius)
    if not np.any(clear >= params.min_radius):
        raise ValueError("no free space at the requested resolution")

    covered = np.zeros(len(grid), dtype=bool)
    centers: list[np.ndarray] = []
    radii: list[float] = []
    masked = clear.copy()
    while len(centers) < params.max_spheres:
        masked[covered] = -np.inf
        idx = int(np.argmax(masked))
        r = clear[idx]
        if r < params.min_radius or covered[idx]:
            break
        c = grid[idx]
        centers.append(c)
        radii.append(float(r))
        covered |= np.linalg.norm(grid - c, axis=1) < r

    sphere_centers = np.asarray(centers)
    sphere_radii = np.asarray(radii)
    portals = _portals_between(sphere_centers, sphere_radii)
    p_centers, p_normals, p_radii, p_spheres = portals
    arcs, arc_lengths, arc_sphere = _arcs_within(p_centers, p_spheres, len(sphere_centers))
    return Roadmap(
        sphere_centers=sphere_centers,
        sphere_radii=sphere_radii,
        portal_centers=p_centers,
        portal_normals=p_normals,
        portal_radii=p_radii,
        portal_spheres=p_spheres,
        arcs=arcs,
        arc_lengths=arc_lengths,
        arc_sphere=arc_sphere,
        scene_hash=scene_fingerprint(scene, params),
    )


def _portals_between(centers: np.ndarray, radii: np.ndarray):
    s = len(centers)
    p_centers, p_normals, p_radii, p_spheres = [], [], [], []
    for i in range(s):
        d = np.linalg.norm(centers[i + 1:] - centers[i], axis=1)
        rsum = radii[i] + radii[i + 1:]
        rdiff = np.abs(radii[i] - radii[i + 1:])
        # proper lens overlap only; containment needs no portal of its own
        hits = np.flatnonzero((d < rsum) & (d > rdiff) & (d > 1e-12)) + i + 1
        for j in hits:
            dij = float(np.linalg.norm(centers[j] - centers[i]))
            axis = (centers[j] - centers[i]) / dij
            a = (dij * dij + radii[i] ** 2 - radii[j] ** 2) / (2.0 * dij)
            rho_sq = radii[i] ** 2 - a * a
            if rho_sq <= 0:
                continue
            p_centers.append(centers[i] + a * axis)
            p_normals.append(axis)
            p_radii.append(float(np.sqrt(rho_sq)))
            p_spheres.append((i, int(j)))
    if not p_centers:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 2), dtype=int))
    return (
        np.asarray(p_centers),
        np.asarray(p_normals),
        np.asarray(p_radii),
        np.asarray(p_spheres, dtype=int),
    )


def _arcs_within(portal_centers: np.ndarray, portal_spheres: np.ndarray, n_spheres: int):
    by_sphere: list[list[int]] = [[] for _ in range(n_spheres)]
    for k, (i, j) in enumerate(portal_spheres):
        by_sphere[i].append(k)
        by_sphere[j].append(k)
    arcs, lengths, owner = [], [], []
    for s, nodes in enumerate(by_sphere):
        for x in range(len(nodes)):
            for y in range(x + 1, len(nodes)):
                u, v = nodes[x], nodes[y]
                arcs.append((u, v))
                lengths.append(float(np.linalg.norm(portal_centers[u] - portal_centers[v])))
                owner.append(s)
    if not arcs:
        return np.zeros((0, 2), dtype=int), np.zeros(0), np.zeros(0, dtype=int)
    return np.asarray(arcs, dtype=int), np.asarray(lengths), np.asarray(owner, dtype=int)


def sphere_components(roadmap: Roadmap) -> np.ndarray:
    """Connected-component label per sphere (portals as edges)."""
    s = len(roadmap.sphere_centers)
    parent = np.arange(s)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in roadmap.portal_spheres:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
    labels = np.array([find(i) for i in range(s)])
    _, labels = np.unique(labels, return_inverse=True)
    return labels


def sphere_containing(roadmap: Roadmap, point: np.ndarray) -> int:
    """Sphere whose interior holds the point (deepest wins); nearest
    center when the point is outside every sphere."""
    depth = roadmap.sphere_radii - np.linalg.norm(roadmap.sphere_centers - point, axis=1)
    idx = int(np.argmax(depth))
    return idx


# ---------------------------------------------------------------------------
# Visibility


def _points_in_sphere(rng: np.random.Generator, center, radius, n) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / 3.0)
    return center + v * r[:, None]


def pair_occlusion(
    roadmap: Roadmap, scene: SceneModel, i: int, j: int, rays: int = 32
) -> float:
    """Occluded fraction of rays between the volumes of spheres i and j."""
    if i == j:
        return 0.0
    a, b = (i, j) if i < j else (j, i)
    rng = np.random.default_rng(0x5EED + a * len(roadmap.sphere_centers) + b)
    p0 = _points_in_sphere(rng, roadmap.sphere_centers[a], roadmap.sphere_radii[a], rays)
    p1 = _points_in_sphere(rng, roadmap.sphere_centers[b], roadmap.sphere_radii[b], rays)
    blocked = segments_blocked_batch(p0, p1, scene.primitives)
    return float(np.mean(blocked))


def precompute_visibility(roadmap: Roadmap, scene: SceneModel, rays_per_pair: int = 32) -> np.ndarray:
    """Full symmetric occlusion table over sphere pairs; O(i,i) = 0."""
    s = len(roadmap.sphere_centers)
    table = np.zeros((s, s))
    for i in range(s):
        for j in range(i + 1, s):
            o = pair_occlusion(roadmap, scene, i, j, rays_per_pair)
            table[i, j] = table[j, i] = o
    roadmap.visibility = table
    return table


def visibility_column(
    roadmap: Roadmap, scene: SceneModel, target_sphere: int, rays_per_pair: int = 32
) -> np.ndarray:
    """Occlusion of one sphere against all spheres, for on-demand use when
    the full table would be too large."""
    if roadmap.visibility is not None:
        return roadmap.visibility[:, target_sphere]
    s = len(roadmap.sphere_centers)
    col = np.zeros(s)
    for i in range(s):
        col[i] = pair_occlusion(roadmap, scene, i, target_sphere, rays_per_pair)
    return col


# ---------------------------------------------------------------------------
# Dynamic tags


def _disk_hit_by_sphere(roadmap: Roadmap, center, radius: float) -> np.ndarray:
    v = center - roadmap.portal_centers
    dn = np.einsum("ij,ij->i", v, roadmap.portal_normals)
    rad = np.sqrt(np.maximum(np.einsum("ij,ij->i", v, v) - dn * dn, 0.0))
    rad_out = np.maximum(rad - roadmap.portal_radii, 0.0)
    dist = np.sqrt(dn * dn + rad_out * rad_out)
    return dist <= radius


def update_dynamic(
    roadmap: Roadmap,
    obstacles,
    frustums,
    inflation: float = 0.35,
) -> np.ndarray:
    """Retag nodes against the current obstacle and frustum sets.

    Tags are recomputed from scratch, so stale tags from vanished
    obstacles clear themselves and reapplying the same sets is a no-op.
    Returns the indices of nodes whose tags changed.
    """
    n = roadmap.node_count
    obs = np.zeros(n, dtype=bool)
    for ob in obstacles:
        if isinstance(ob, SphereObstacle):
            obs |= _disk_hit_by_sphere(roadmap, ob.center, ob.radius + inflation)
        elif isinstance(ob, BoxObstacle):
            # disk bounded by its sphere: distance from disk center to box
            lo = np.asarray(ob.lo) - inflation
            hi = np.asarray(ob.hi) + inflation
            d = _point_box_signed(roadmap.portal_centers, lo, hi)
            obs |= d <= roadmap.portal_radii
        else:
            d = np.array([ob.distance(p) for p in roadmap.portal_centers])
            obs |= d <= inflation + roadmap.portal_radii
    fru = np.zeros(n, dtype=bool)
    for f in frustums:
        fru |= f.contains_batch(roadmap.portal_centers)
    changed = np.flatnonzero(
        (obs != roadmap.blocked_obstacle) | (fru != roadmap.blocked_frustum)
    )
    roadmap.blocked_obstacle = obs
    roadmap.blocked_frustum = fru
    return changed


def reachability_prune(
    roadmap: Roadmap,
    position: np.ndarray,
    velocity: np.ndarray,
    vmax: float,
    amax: float,
) -> np.ndarray:
    """Tag nodes the drone cannot reach without overshooting: behind the
    velocity direction and closer than the stopping distance."""
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    speed = float(np.linalg.norm(velocity))
    if speed < 1e-9:
        tags = np.zeros(roadmap.node_count, dtype=bool)
    else:
        stop = speed * speed / (2.0 * amax)
        rel = roadmap.portal_centers - position
        behind = rel @ (velocity / speed) < 0.0
        near = np.linalg.norm(rel, axis=1) <= stop
        tags = behind & near
    changed = np.flatnonzero(tags != roadmap.unreachable)
    roadmap.unreachable = tags
    return changed


# ---------------------------------------------------------------------------
# Cache


def save_roadmap(path, roadmap: Roadmap) -> None:
    np.savez_compressed(
        path,
        sphere_centers=roadmap.sphere_centers,
        sphere_radii=roadmap.sphere_radii,
        portal_centers=roadmap.portal_centers,
        portal_normals=roadmap.portal_normals,
        portal_radii=roadmap.portal_radii,
        portal_spheres=roadmap.portal_spheres,
        arcs=roadmap.arcs,
        arc_lengths=roadmap.arc_lengths,
        arc_sphere=roadmap.arc_sphere,
        scene_hash=np.array(roadmap.scene_hash),
        visibility=roadmap.visibility if roadmap.visibility is not None else np.zeros((0, 0)),
    )


def load_roadmap(path, expected_hash: str) -> Roadmap | None:
    """Load a cached roadmap; None when missing or built from another scene."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError):
        return None
    if str(data["scene_hash"]) != expected_hash:
        return None
    vis = data["visibility"]
    return Roadmap(
        sphere_centers=data["sphere_centers"],
        sphere_radii=data["sphere_radii"],
        portal_centers=data["portal_centers"],
        portal_normals=data["portal_normals"],
        portal_radii=data["portal_radii"],
        portal_spheres=data["portal_spheres"],
        arcs=data["arcs"],
        arc_lengths=data["arc_lengths"],
        arc_sphere=data["arc_sphere"],
        scene_hash=str(data["scene_hash"]),
        visibility=vis if vis.size else None,
    )
