"""Path search over the portal graph in screen-composition space.

Nodes are compared by what the shot looks like from them, not where they
are: each node gets a 4-vector (alpha, phi, theta, z) built from the target
pair, and edge lengths are Euclidean in those normalized coordinates with a
soft occlusion multiplier. Two searches share the machinery: point-to-point
framing search (classic A*, straight-line heuristic in the composition
metric) and sketch following, which walks virtual (node, sketch index)
pairs so self-crossing sketches revisit hub nodes as often as drawn.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .roadmap import Roadmap, sphere_containing
from .toric import _surface_frame, dts_coords_batch


@dataclass(frozen=True)
class PlanParams:
    d_s: float = 1.0
    w_o: float = 0.5
    z_min: float = 0.0
    z_max: float = 10.0
    window: int = 8
    ignore_frustum: bool = False

    @property
    def z_span(self) -> float:
        span = self.z_max - self.z_min
        if span <= 0:
            raise ValueError("z bounds must span a positive height range")
        return span


@dataclass
class PlanResult:
    node_ids: list  # roadmap node ids; -1 marks the query endpoints
    positions: np.ndarray  # (K, 3)
    cost: float
    expanded: int
    sketch_indices: list | None = None


def tau_coords(points: np.ndarray, targets, d_s: float) -> tuple[np.ndarray, np.ndarray]:
    """(K, 4) composition coordinates (alpha, phi, theta, z) and a validity
    mask. Points too close to a target keep a row but are flagged invalid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(targets) == 2:
        a = np.asarray(targets[0].position, dtype=float)
        b = np.asarray(targets[1].position, dtype=float)
        alpha, phi, theta, unsafe = dts_coords_batch(a, b, d_s, points)
    elif len(targets) == 1:
        # spherical chart around the lone target; apparent size stands in
        # for the pair angle so closing distance still costs something
        t = targets[0]
        ex, ey, ez, _ = _surface_frame(t.position, t.forward)
        rel = points - t.position
        x = rel @ ex
        perp = rel - x[:, None] * ex
        h = np.linalg.norm(perp, axis=1)
        dist = np.linalg.norm(rel, axis=1)
        alpha = 2.0 * np.arctan2(0.5, np.maximum(dist, 1e-9))
        beta = np.where(h < 1e-12, 0.0, np.arctan2(perp @ ez, perp @ ey))
        pos_side = np.abs(beta) <= np.pi / 2.0
        phi = np.where(pos_side, beta / (np.pi / 2.0), np.sign(beta) * (np.pi - np.abs(beta)) / (np.pi / 2.0))
        s = np.arctan2(h, x) / np.pi
        theta = np.where(pos_side, s, -s)
        unsafe = dist < d_s
    else:
        raise ValueError("composition coordinates need one or two targets")
    tau = np.stack([alpha, phi, theta, points[:, 2]], axis=1)
    return tau, ~unsafe


def tau_distance(tau_i: np.ndarray, tau_j: np.ndarray, z_span: float) -> np.ndarray:
    """Screen-property distance: normalized (alpha, phi, theta) deltas plus
    the height delta over the allowed height range."""
    tau_i = np.asarray(tau_i, dtype=float)
    tau_j = np.asarray(tau_j, dtype=float)
    d = tau_i - tau_j
    two_pi = 2.0 * np.pi
    ds_sq = (d[..., 0] / two_pi) ** 2 + (d[..., 1] / two_pi) ** 2 + (d[..., 2] / two_pi) ** 2
    dh_sq = (d[..., 3] / z_span) ** 2
    return np.sqrt(ds_sq + dh_sq)


def arc_cost(tau_i, tau_j, occlusion: float, w_o: float, z_span: float):
    """Edge weight: composition distance scaled up on occluded arcs."""
    if not 0.0 <= w_o <= 1.0:
        raise ValueError("occlusion weight must be in [0, 1]")
    return (1.0 + w_o * occlusion) * tau_distance(tau_i, tau_j, z_span)


def _portals_of_sphere(roadmap: Roadmap, sphere: int) -> np.ndarray:
    return np.flatnonzero((roadmap.portal_spheres == sphere).any(axis=1))


def _traversable(roadmap: Roadmap, params: PlanParams) -> np.ndarray:
    blocked = roadmap.blocked_obstacle | roadmap.unreachable
    if not params.ignore_frustum:
        blocked = blocked | roadmap.blocked_frustum
    return ~blocked


def plan_framing_path(
    q_s: np.ndarray,
    q_e: np.ndarray,
    targets,
    roadmap: Roadmap,
    params: PlanParams,
    occlusion: np.ndarray | None = None,
) -> PlanResult | None:
    """Cheapest composition-space path from q_s to q_e through the portals.

    The endpoints join the graph as temporary nodes wired to the portals of
    their containing spheres. Returns None when no traversable route exists.
    """
    q_s = np.asarray(q_s, dtype=float)
    q_e = np.asarray(q_e, dtype=float)
    n = roadmap.node_count
    occ = np.zeros(len(roadmap.sphere_centers)) if occlusion is None else occlusion

    s_start = sphere_containing(roadmap, q_s)
    s_goal = sphere_containing(roadmap, q_e)
    for q, s, name in ((q_s, s_start, "start"), (q_e, s_goal, "goal")):
        depth = roadmap.sphere_radii[s] - np.linalg.norm(roadmap.sphere_centers[s] - q)
        if depth < 0:
            raise ValueError(f"{name} endpoint lies outside the covered free space")

    if np.allclose(q_s, q_e):
        return PlanResult([-1], q_s[None, :].copy(), 0.0, 0)

    pts = np.vstack([roadmap.portal_centers, q_s[None, :], q_e[None, :]])
    tau, valid = tau_coords(pts, targets, params.d_s)
    start_id, goal_id = n, n + 1
    if not (valid[start_id] and valid[goal_id]):
        raise ValueError("endpoint inside the safety distance of a target")

    ok = np.ones(n + 2, dtype=bool)
    ok[:n] = _traversable(roadmap, params) & valid[:n]

    # static arcs
    arc_u = roadmap.arcs[:, 0]
    arc_v = roadmap.arcs[:, 1]
    arc_w = arc_cost(tau[arc_u], tau[arc_v], occ[roadmap.arc_sphere], params.w_o, params.z_span)

    # temporary endpoint arcs through the containing spheres
    extra_u, extra_v, extra_w = [], [], []

    def connect(temp_id, sphere):
        for node in _portals_of_sphere(roadmap, sphere):
            w = arc_cost(tau[temp_id], tau[node], occ[sphere], params.w_o, params.z_span)
            extra_u.append(temp_id)
            extra_v.append(int(node))
            extra_w.append(float(w))

    connect(start_id, s_start)
    connect(goal_id, s_goal)
    if s_start == s_goal:
        extra_u.append(start_id)
        extra_v.append(goal_id)
        extra_w.append(float(arc_cost(tau[start_id], tau[goal_id], occ[s_start], params.w_o, params.z_span)))

    all_u = np.concatenate([arc_u, arc_v, np.asarray(extra_u, int), np.asarray(extra_v, int)])
    all_v = np.concatenate([arc_v, arc_u, np.asarray(extra_v, int), np.asarray(extra_u, int)])
    all_w = np.concatenate([arc_w, arc_w, np.asarray(extra_w), np.asarray(extra_w)])

    order = np.argsort(all_u, kind="stable")
    all_u, all_v, all_w = all_u[order], all_v[order], all_w[order]
    indptr = np.zeros(n + 3, dtype=np.int64)
    np.add.at(indptr, all_u + 1, 1)
    np.cumsum(indptr, out=indptr)

    h = tau_distance(tau, tau[goal_id], params.z_span)

    dist = np.full(n + 2, np.inf)
    parent = np.full(n + 2, -9, dtype=np.int64)
    dist[start_id] = 0.0
    done = np.zeros(n + 2, dtype=bool)
    heap = [(float(h[start_id]), 0.0, start_id)]
    expanded = 0
    while heap:
        f, g, u = heapq.heappop(heap)
        if done[u] or g > dist[u]:
            continue
        if u == goal_id:
            break
        done[u] = True
        expanded += 1
        lo, hi = indptr[u], indptr[u + 1]
        for k in range(lo, hi):
            v = all_v[k]
            if done[v] or not ok[v]:
                continue
            cand = g + all_w[k]
            if cand < dist[v]:
                dist[v] = cand
                parent[v] = u
                heapq.heappush(heap, (cand + h[v], cand, v))
    if not np.isfinite(dist[goal_id]):
        return None

    chain = [goal_id]
    while chain[-1] != start_id:
        chain.append(int(parent[chain[-1]]))
    chain.reverse()
    node_ids = [(-1 if c >= n else c) for c in chain]
    positions = pts[chain]
    return PlanResult(node_ids, positions, float(dist[goal_id]), expanded)


def plan_sketch_path(
    sketch: np.ndarray,
    start_node: int,
    roadmap: Roadmap,
    params: PlanParams,
    max_pops: int = 500_000,
) -> PlanResult | None:
    """Follow a drawn 3D polyline through the portal graph.

    States are lazy (node, sketch index) pairs; moving to a neighbor node may
    consume between 1 and `window` sketch indices, the accumulated cost is
    index-span times the node's distance to the sketch sample, and the
    average cost per consumed index prices the remainder. Self-crossing
    sketches revisit shared nodes once per crossing because the index makes
    the states distinct.
    """
    sketch = np.asarray(sketch, dtype=float)
    m_total = len(sketch)
    if m_total < 2:
        raise ValueError("sketch needs at least two points")
    window = params.window
    if window < 1:
        raise ValueError("window must be positive")
    trav = _traversable(roadmap, params)
    if not trav[start_node]:
        raise ValueError("start node is blocked")

    centers = roadmap.portal_centers
    # the endpoint snaps to the nearest traversable portal
    end_d = np.linalg.norm(centers - sketch[-1], axis=1)
    end_d[~trav] = np.inf
    goal_node = int(np.argmin(end_d))

    best: dict[tuple[int, int], float] = {(start_node, 0): 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    heap = [(0.0, 0.0, start_node, 0)]
    pops = 0
    goal_state = None
    while heap and pops < max_pops:
        f, g, node, m = heapq.heappop(heap)
        if g > best.get((node, m), np.inf):
            continue
        pops += 1
        if m == m_total - 1 and node == goal_node:
            goal_state = (node, m)
            break
        nbrs, _ = roadmap.neighbors(node)
        hi_m = min(m + window, m_total - 1)
        for nb in nbrs:
            nb = int(nb)
            if not trav[nb]:
                continue
            d_all = np.linalg.norm(sketch[m + 1: hi_m + 1] - centers[nb], axis=1)
            for step, d in enumerate(d_all, start=1):
                m2 = m + step
                cand = g + step * float(d)
                key = (nb, m2)
                if cand < best.get(key, np.inf):
                    best[key] = cand
                    parent[key] = (node, m)
                    remaining = (m_total - 1 - m2) * (cand / m2)
                    heapq.heappush(heap, (cand + remaining, cand, nb, m2))
    if goal_state is None:
        return None

    chain = [goal_state]
    while chain[-1] in parent:
        chain.append(parent[chain[-1]])
    chain.reverse()
    node_ids = [c[0] for c in chain]
    indices = [c[1] for c in chain]
    positions = centers[np.asarray(node_ids)]
    return PlanResult(node_ids, positions, float(best[goal_state]), pops, sketch_indices=indices)


def validate_path(node_ids, roadmap: Roadmap, ignore_frustum: bool = False) -> int | None:
    """Index of the first blocked node on the path, or None when clear."""
    blocked = roadmap.blocked_obstacle | roadmap.unreachable
    if not ignore_frustum:
        blocked = blocked | roadmap.blocked_frustum
    for k, node in enumerate(node_ids):
        if node >= 0 and blocked[node]:
            return k
    return None
