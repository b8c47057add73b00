"""Multi-drone shot coordination.

A catalog of named framings (interval boxes in the composition chart) is
instantiated against the current targets, drones are assigned framings by
min-conflict local search over (hard conflicts, soft conflicts, path cost),
and conflicts arising at runtime are fixed by local repair that touches
only the drones transitively involved. One drone is the master (its feed
is live); the others hold complementary standby shots.

Conflict severities: collisions and anything visible in the master's
frame are hard; slaves seeing each other and near-duplicate view angles
onto a shared target are soft.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Frustum
from .orientation import (
    DEFAULT_INTRINSICS,
    CameraPose,
    Intrinsics,
    look_at_targets,
    pose_frustum,
)
from .planner import PlanParams, plan_framing_path
from .roadmap import Roadmap, update_dynamic
from .toric import DTSSurface, Target, build_surface

_SAMPLES_PER_EDGE = 7


# ---------------------------------------------------------------------------
# Framing catalog


@dataclass(frozen=True)
class Framing:
    """Named shot: an interval box in the composition chart.

    For two-target framings `alpha` is the subtended-angle interval in
    radians; for single-target framings it is the viewing distance in
    meters (the single-target surface is a sphere of that radius).
    """

    name: str
    arity: int
    phi: tuple[float, float]
    theta: tuple[float, float]
    alpha: tuple[float, float]

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValueError("framing arity must be 1 or 2")
        for lo, hi in (self.phi, self.theta, self.alpha):
            if not lo < hi:
                raise ValueError(f"empty interval in framing {self.name!r}")

    @property
    def center(self) -> np.ndarray:
        return np.array([
            0.5 * (self.phi[0] + self.phi[1]),
            0.5 * (self.theta[0] + self.theta[1]),
            0.5 * (self.alpha[0] + self.alpha[1]),
        ])


_TWO_TARGET = [
    Framing("ots-close-b", 2, (0.05, 0.30), (0.06, 0.22), (0.95, 1.25)),
    Framing("ots-close-a", 2, (0.05, 0.30), (0.78, 0.94), (0.95, 1.25)),
    Framing("ots-medium-b", 2, (0.05, 0.30), (0.06, 0.22), (0.55, 0.85)),
    Framing("ots-medium-a", 2, (0.05, 0.30), (0.78, 0.94), (0.55, 0.85)),
    Framing("external-apex-b", 2, (0.05, 0.35), (0.26, 0.36), (0.50, 0.80)),
    Framing("external-apex-a", 2, (0.05, 0.35), (0.64, 0.74), (0.50, 0.80)),
    Framing("apex-low", 2, (0.02, 0.18), (0.40, 0.60), (0.45, 0.75)),
    Framing("apex-high", 2, (0.45, 0.75), (0.40, 0.60), (0.45, 0.75)),
]

_SINGLE_TARGET = [
    Framing("front-close", 1, (-0.15, 0.15), (-0.08, 0.08), (1.2, 2.0)),
    Framing("front-medium", 1, (-0.15, 0.15), (-0.08, 0.08), (2.2, 3.5)),
    Framing("quarter-front-left", 1, (-0.10, 0.25), (0.15, 0.35), (1.8, 3.0)),
    Framing("quarter-front-right", 1, (-0.10, 0.25), (-0.35, -0.15), (1.8, 3.0)),
    Framing("profile-left", 1, (-0.10, 0.20), (0.40, 0.60), (1.8, 3.2)),
    Framing("profile-right", 1, (-0.10, 0.20), (-0.60, -0.40), (1.8, 3.2)),
    Framing("quarter-back-left", 1, (-0.10, 0.25), (0.65, 0.85), (1.8, 3.0)),
    Framing("back-medium", 1, (-0.10, 0.20), (0.88, 0.98), (2.0, 3.2)),
    Framing("back-long", 1, (0.00, 0.30), (0.88, 0.98), (3.5, 5.0)),
]


def framing_catalog() -> tuple[Framing, ...]:
    """The default 17-entry shot catalog (8 two-target, 9 single-target)."""
    return tuple(_TWO_TARGET + _SINGLE_TARGET)


def parse_catalog(text: str) -> tuple[Framing, ...]:
    """Catalog from its config-file form; see serialize_catalog."""
    doc = json.loads(text)
    out = []
    for row in doc["framings"]:
        out.append(Framing(
            name=row["name"],
            arity=int(row["arity"]),
            phi=tuple(float(v) for v in row["phi"]),
            theta=tuple(float(v) for v in row["theta"]),
            alpha=tuple(float(v) for v in row["alpha"]),
        ))
    return tuple(out)


def serialize_catalog(framings) -> str:
    rows = [
        {"name": f.name, "arity": f.arity, "phi": list(f.phi),
         "theta": list(f.theta), "alpha": list(f.alpha)}
        for f in framings
    ]
    return json.dumps({"framings": rows}, indent=2)


# ---------------------------------------------------------------------------
# Geometric instances


@dataclass
class FramingInstance:
    """A framing realized against concrete targets.

    Caches world-space samples along the twelve edges of the parameter
    box and lazily built surfaces per alpha. `empty` flags boxes with no
    buildable surface for the current target poses (targets too close for
    any safe alpha in the interval).
    """

    framing: Framing
    targets: list
    d_s: float
    empty: bool
    alpha_lo: float = 0.0
    alpha_hi: float = 0.0
    edge_params: np.ndarray | None = None  # (12 * k, 3) phi, theta, alpha
    edge_points: np.ndarray | None = None  # (12 * k, 3) world
    _surfaces: dict = field(default_factory=dict, repr=False)

    def surface_at(self, alpha: float) -> DTSSurface:
        key = round(float(alpha), 12)
        surf = self._surfaces.get(key)
        if surf is None:
            surf = build_surface(self.targets, float(alpha), self.d_s)
            self._surfaces[key] = surf
        return surf

    def world_at(self, phi: float, theta: float, alpha: float) -> np.ndarray:
        return self.surface_at(alpha).dts_to_world(phi, theta)

    def center_params(self) -> np.ndarray:
        c = self.framing.center
        c[2] = 0.5 * (self.alpha_lo + self.alpha_hi)
        return c

    def center_point(self) -> np.ndarray:
        phi, theta, alpha = self.center_params()
        return self.world_at(phi, theta, alpha)


def _box_edges(phi, theta, alpha):
    """The 12 edges of an interval box as (start, end) param triples."""
    lo = np.array([phi[0], theta[0], alpha[0]])
    hi = np.array([phi[1], theta[1], alpha[1]])
    edges = []
    for axis in range(3):
        fixed = [a for a in range(3) if a != axis]
        for ends in itertools.product((0, 1), repeat=2):
            a = lo.copy()
            b = lo.copy()
            b[axis] = hi[axis]
            for f_axis, pick in zip(fixed, ends):
                v = hi[f_axis] if pick else lo[f_axis]
                a[f_axis] = v
                b[f_axis] = v
            edges.append((a, b))
    return edges


def instantiate(framing: Framing, targets, d_s: float) -> FramingInstance:
    """Realize a framing against targets, caching edge samples in world
    space. Flags an empty instance when no alpha in the box yields a
    buildable safe surface."""
    targets = list(targets)
    if len(targets) != framing.arity:
        raise ValueError(
            f"framing {framing.name!r} takes {framing.arity} target(s), "
            f"got {len(targets)}")
    inst = FramingInstance(framing=framing, targets=targets, d_s=d_s,
                           empty=True)
    if framing.arity == 2:
        gap = np.linalg.norm(targets[1].position - targets[0].position)
        if gap < 1e-9:
            return inst
    # probe the alpha interval, keep the buildable subrange
    probes = np.linspace(framing.alpha[0], framing.alpha[1], 7)
    valid = []
    for a in probes:
        try:
            inst.surface_at(a)
        except ValueError:
            continue
        valid.append(float(a))
    if not valid:
        return inst
    inst.empty = False
    inst.alpha_lo, inst.alpha_hi = min(valid), max(valid)
    edges = _box_edges(framing.phi, framing.theta,
                       (inst.alpha_lo, inst.alpha_hi))
    t = np.linspace(0.0, 1.0, _SAMPLES_PER_EDGE)
    params = np.concatenate([
        a[None, :] + t[:, None] * (b - a)[None, :] for a, b in edges
    ])
    pts = np.empty_like(params)
    for i, (phi, theta, alpha) in enumerate(params):
        pts[i] = inst.world_at(phi, theta, alpha)
    inst.edge_params = params
    inst.edge_points = pts
    return inst


# ---------------------------------------------------------------------------
# Region vs frustum


class Coverage(enum.Enum):
    NONE = "none"
    PARTIAL = "partial"
    FULL = "full"


@dataclass
class RegionVisibility:
    coverage: Coverage
    # center of the largest connected subvolume left clear of the frustum
    # (phi, theta, alpha), None unless coverage is partial
    clear_center: tuple | None = None
    # (edge index, edge parameter) of frustum boundary crossings
    crossings: tuple = ()


def _coverage_quick(instance: FramingInstance, frustum: Frustum) -> Coverage:
    """Classification from the cached edge samples plus a center probe."""
    mask = frustum.contains_batch(instance.edge_points)
    if mask.all():
        return Coverage.FULL
    if mask.any():
        return Coverage.PARTIAL
    if frustum.contains(instance.center_point()):
        return Coverage.PARTIAL
    return Coverage.NONE


def _edge_crossings(instance: FramingInstance, frustum: Frustum,
                    tol: float = 1e-3):
    """Bisect frustum boundary crossings along each box edge to `tol` in
    edge parameter."""
    k = _SAMPLES_PER_EDGE
    mask = frustum.contains_batch(instance.edge_points)
    ts = np.linspace(0.0, 1.0, k)
    out = []
    for e in range(12):
        sl = slice(e * k, (e + 1) * k)
        flags = mask[sl]
        p0 = instance.edge_params[sl][0]
        p1 = instance.edge_params[sl][-1]
        for i in range(k - 1):
            if flags[i] == flags[i + 1]:
                continue
            a, b = ts[i], ts[i + 1]
            fa = flags[i]
            while b - a > tol:
                m = 0.5 * (a + b)
                pm = p0 + m * (p1 - p0)
                fm = frustum.contains(instance.world_at(*pm))
                if fm == fa:
                    a = m
                else:
                    b = m
            out.append((e, 0.5 * (a + b)))
    return tuple(out)


def _clear_center(instance: FramingInstance, frustum: Frustum, n: int = 33):
    """Center of the largest connected box subvolume outside the frustum,
    on an n^3 parameter grid. None when the frustum covers everything."""
    f = instance.framing
    phis = np.linspace(f.phi[0], f.phi[1], n)
    thetas = np.linspace(f.theta[0], f.theta[1], n)
    alphas = np.linspace(instance.alpha_lo, instance.alpha_hi, n)
    ph, th = np.meshgrid(phis, thetas, indexing="ij")
    free = np.zeros((n, n, n), dtype=bool)  # [alpha, phi, theta]
    for ia, alpha in enumerate(alphas):
        try:
            surf = instance.surface_at(alpha)
        except ValueError:
            continue
        pts = surf.dts_to_world_batch(ph.ravel(), th.ravel())
        free[ia] = ~frustum.contains_batch(pts).reshape(n, n)
    labels, count = ndimage.label(free)
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1
    ia, ip, it = np.nonzero(labels == best)
    center = np.array([phis[ip].mean(), thetas[it].mean(), alphas[ia].mean()])
    # a non-convex component can have a covered centroid; snap to the
    # nearest free cell of the component
    ci = np.array([center[2], center[0], center[1]])
    cells = np.stack([alphas[ia], phis[ip], thetas[it]], axis=1)
    centroid_cell = cells[np.argmin(np.linalg.norm(cells - ci, axis=1))]
    grid_idx = (
        int(np.argmin(np.abs(alphas - center[2]))),
        int(np.argmin(np.abs(phis - center[0]))),
        int(np.argmin(np.abs(thetas - center[1]))),
    )
    if not free[grid_idx]:
        center = np.array([centroid_cell[1], centroid_cell[2],
                           centroid_cell[0]])
    return tuple(float(v) for v in center)


def region_frustum_visibility(instance: FramingInstance,
                              frustum: Frustum) -> RegionVisibility:
    """How much of the instance box the frustum covers: none, partial
    (with the center of the largest clear subvolume and the bisected edge
    crossings), or full."""
    if instance.empty:
        return RegionVisibility(Coverage.NONE)
    cov = _coverage_quick(instance, frustum)
    if cov is not Coverage.PARTIAL:
        return RegionVisibility(cov)
    crossings = _edge_crossings(instance, frustum)
    center = _clear_center(instance, frustum)
    if center is None:
        return RegionVisibility(Coverage.FULL, crossings=crossings)
    return RegionVisibility(Coverage.PARTIAL, clear_center=center,
                            crossings=crossings)


# ---------------------------------------------------------------------------
# Conflicts


class ConflictKind(enum.Enum):
    COLLISION = "collision"
    MASTER_VISIBILITY = "master-visibility"
    SLAVE_VISIBILITY = "slave-visibility"
    ANGLE = "angle"


@dataclass(frozen=True)
class Conflict:
    kind: ConflictKind
    drones: tuple
    value: float = 0.0
    detail: str = ""

    @property
    def hard(self) -> bool:
        return self.kind in (ConflictKind.COLLISION,
                             ConflictKind.MASTER_VISIBILITY)


@dataclass
class DroneView:
    """A drone as the coordinator sees it: id, position, camera frustum."""

    ident: str
    position: np.ndarray
    frustum: Frustum | None = None
    role: str = "slave"

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


@dataclass
class CoordinationConfig:
    min_separation: float = 1.0
    angle_limit: float = float(np.radians(30.0))
    intrinsics: Intrinsics = field(default_factory=lambda: DEFAULT_INTRINSICS)


@dataclass
class Assignment:
    """Framing per drone plus the concrete flight goals derived from it."""

    master: str
    framings: dict  # drone id -> FramingInstance
    destinations: dict  # drone id -> world point inside the instance
    dts_points: dict  # drone id -> (phi, theta, alpha)
    costs: dict  # drone id -> planned path cost in the roadmap metric

    def copy(self) -> "Assignment":
        return Assignment(self.master, dict(self.framings),
                          dict(self.destinations), dict(self.dts_points),
                          dict(self.costs))


def _primary_key(instance: FramingInstance):
    t = instance.targets[0]
    return t.ident if t.ident else tuple(np.round(t.position, 9))


def detect_conflicts(views, assignment: Assignment,
                     config: CoordinationConfig | None = None,
                     region_cache: dict | None = None) -> list:
    """Complete conflict set for the given drone views and assignment.

    Collisions are reported once per unordered pair; master visibility
    covers both slave positions and slave region boxes against the master
    frustum; slave visibility is per ordered (observer, seen) pair; angle
    conflicts fire when two drones view a shared primary target from
    directions closer than the configured limit.

    `region_cache` memoizes region/frustum classifications by object
    identity for callers that score many assignments against the same
    instances.
    """
    config = config or CoordinationConfig()
    views = sorted(views, key=lambda v: v.ident)
    by_id = {v.ident: v for v in views}
    master = assignment.master
    out = []

    for a, b in itertools.combinations(views, 2):
        d = float(np.linalg.norm(a.position - b.position))
        if d < config.min_separation:
            out.append(Conflict(ConflictKind.COLLISION,
                                (a.ident, b.ident), value=d))

    mview = by_id.get(master)
    mfrustum = mview.frustum if mview is not None else None
    if mfrustum is not None:
        for v in views:
            if v.ident == master:
                continue
            if mfrustum.contains(v.position):
                out.append(Conflict(ConflictKind.MASTER_VISIBILITY,
                                    (v.ident, master), detail="position"))
        for ident in sorted(assignment.framings):
            if ident == master:
                continue
            inst = assignment.framings[ident]
            if inst is None or inst.empty or ident not in by_id:
                continue
            if region_cache is not None:
                key = (id(inst), id(mfrustum))
                cov = region_cache.get(key)
                if cov is None:
                    cov = _coverage_quick(inst, mfrustum)
                    region_cache[key] = cov
            else:
                cov = _coverage_quick(inst, mfrustum)
            if cov is Coverage.FULL:
                out.append(Conflict(ConflictKind.MASTER_VISIBILITY,
                                    (ident, master), detail="region-full"))
            elif cov is Coverage.PARTIAL:
                dest = assignment.destinations.get(ident)
                if dest is not None and mfrustum.contains(np.asarray(dest)):
                    out.append(Conflict(ConflictKind.MASTER_VISIBILITY,
                                        (ident, master),
                                        detail="region-partial"))

    for v in views:
        if v.ident == master or v.frustum is None:
            continue
        for other in views:
            if other.ident == v.ident:
                continue
            if v.frustum.contains(other.position):
                out.append(Conflict(ConflictKind.SLAVE_VISIBILITY,
                                    (v.ident, other.ident)))

    with_inst = [v for v in views
                 if assignment.framings.get(v.ident) is not None
                 and not assignment.framings[v.ident].empty]
    for a, b in itertools.combinations(with_inst, 2):
        ia = assignment.framings[a.ident]
        ib = assignment.framings[b.ident]
        if _primary_key(ia) != _primary_key(ib):
            continue
        tgt = ia.targets[0].position
        va = tgt - a.position
        vb = tgt - b.position
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na < 1e-9 or nb < 1e-9:
            continue
        ang = float(np.arccos(np.clip(va @ vb / (na * nb), -1.0, 1.0)))
        if ang < config.angle_limit:
            out.append(Conflict(ConflictKind.ANGLE, (a.ident, b.ident),
                                value=ang))
    return out


# ---------------------------------------------------------------------------
# Assignment search


@dataclass
class CoordinationContext:
    targets: list
    roadmap: Roadmap
    plan_params: PlanParams
    config: CoordinationConfig = field(default_factory=CoordinationConfig)




class _Candidates:
    """Per-scene precompute: instances, destinations, aimed frustums, and
    per-drone path costs for every catalog framing.

    `overrides` holds per-drone destination replacements (used when a
    repair moves a drone inside its framing box instead of reassigning);
    an override survives only while the drone keeps that framing index.
    """

    def __init__(self, views, catalog, ctx: CoordinationContext):
        self.catalog = list(catalog)
        self.ctx = ctx
        self.views = sorted(views, key=lambda v: v.ident)
        self.instances = []
        self.dest = []
        self.dts = []
        self.frustums = []
        for f in self.catalog:
            inst = None
            if f.arity <= len(ctx.targets):
                inst = instantiate(f, ctx.targets[:f.arity],
                                   ctx.plan_params.d_s)
            self.instances.append(inst)
            if inst is None or inst.empty:
                self.dest.append(None)
                self.dts.append(None)
                self.frustums.append(None)
                continue
            params = inst.center_params()
            dest = inst.world_at(*params)
            self.dest.append(dest)
            self.dts.append(tuple(float(v) for v in params))
            self.frustums.append(self._aimed(dest, inst))
        self._costs = {}
        self.overrides = {}  # ident -> (framing idx, dest, dts, frustum)
        self.region_cache = {}

    def _aimed(self, dest, inst) -> Frustum:
        res = look_at_targets(dest, [t.position for t in inst.targets])
        pose = CameraPose(position=dest, yaw=res.yaw, tilt=res.tilt)
        return pose_frustum(pose, self.ctx.config.intrinsics)

    def usable(self, fi: int) -> bool:
        return self.dest[fi] is not None

    def view_of(self, ident: str) -> DroneView:
        return next(v for v in self.views if v.ident == ident)

    def placement(self, ident: str, fi: int):
        """(destination, dts params, aimed frustum) honoring overrides."""
        ov = self.overrides.get(ident)
        if ov is not None and ov[0] == fi:
            return ov[1], ov[2], ov[3]
        return self.dest[fi], self.dts[fi], self.frustums[fi]

    def set_override(self, ident: str, fi: int, dts_params) -> None:
        inst = self.instances[fi]
        dest = inst.world_at(*dts_params)
        self.overrides[ident] = (fi, dest,
                                 tuple(float(v) for v in dts_params),
                                 self._aimed(dest, inst))
        self._costs.pop((ident, fi), None)

    def clear_override(self, ident: str) -> None:
        ov = self.overrides.pop(ident, None)
        if ov is not None:
            self._costs.pop((ident, ov[0]), None)

    def cost(self, ident: str, fi: int) -> float:
        key = (ident, fi)
        if key not in self._costs:
            self._costs[key] = self._plan_cost(ident, fi)
        return self._costs[key]

    def _plan_cost(self, ident: str, fi: int) -> float:
        if not self.usable(fi):
            return np.inf
        dest, _, _ = self.placement(ident, fi)
        inst = self.instances[fi]
        try:
            result = plan_framing_path(self.view_of(ident).position, dest,
                                       inst.targets, self.ctx.roadmap,
                                       self.ctx.plan_params)
        except ValueError:
            return np.inf
        return np.inf if result is None else float(result.cost)

    def synthetic_views(self, choice: dict) -> list:
        """Views with every assigned drone placed at its destination."""
        out = []
        for v in self.views:
            fi = choice.get(v.ident)
            if fi is None or not self.usable(fi):
                out.append(v)
            else:
                dest, _, frustum = self.placement(v.ident, fi)
                out.append(DroneView(v.ident, dest, frustum, role=v.role))
        return out

    def assignment_for(self, choice: dict, master: str) -> Assignment:
        framings, dests, dts, costs = {}, {}, {}, {}
        for ident in sorted(choice):
            fi = choice[ident]
            dest, params, _ = self.placement(ident, fi)
            framings[ident] = self.instances[fi]
            dests[ident] = dest
            dts[ident] = params
            costs[ident] = self.cost(ident, fi)
        return Assignment(master, framings, dests, dts, costs)

    def score(self, choice: dict, master: str):
        """(hard, soft, total cost) of a full candidate assignment."""
        assignment = self.assignment_for(choice, master)
        conflicts = detect_conflicts(self.synthetic_views(choice),
                                     assignment, self.ctx.config,
                                     self.region_cache)
        hard = sum(1 for c in conflicts if c.hard)
        soft = len(conflicts) - hard
        total = sum(assignment.costs.values())
        return hard, soft, total

    def conflicts_for(self, choice: dict, master: str) -> list:
        assignment = self.assignment_for(choice, master)
        return detect_conflicts(self.synthetic_views(choice), assignment,
                                self.ctx.config, self.region_cache)


def _per_drone_counts(conflicts):
    counts = {}
    for c in conflicts:
        for ident in c.drones:
            h, s = counts.get(ident, (0, 0))
            counts[ident] = (h + 1, s) if c.hard else (h, s + 1)
    return counts


def _best_framing(cand: _Candidates, choice: dict, ident: str, master: str):
    """Framing index minimizing (hard, soft, cost) for one drone with all
    other drones fixed; ties resolved by catalog order."""
    best = None
    best_score = None
    for fi in range(len(cand.catalog)):
        if not cand.usable(fi) or not np.isfinite(cand.cost(ident, fi)):
            continue
        trial = dict(choice)
        trial[ident] = fi
        h, s, _ = cand.score(trial, master)
        score = (h, s, cand.cost(ident, fi))
        if best_score is None or score < best_score:
            best, best_score = fi, score
    return best


def _search_slaves(cand: _Candidates, master: str, master_fi: int,
                   slaves, seeds: dict, max_steps: int) -> dict:
    """Greedy seed then min-conflict sweeps for the slave drones with the
    master's framing fixed."""
    choice = {master: master_fi}
    for ident in slaves:
        fi = seeds.get(ident)
        if fi is None or not cand.usable(fi):
            fi = _best_framing(cand, choice, ident, master)
        if fi is None:
            raise ValueError(f"no framing is reachable for drone {ident!r}")
        choice[ident] = fi
    stuck = set()
    for _ in range(max_steps):
        conflicts = cand.conflicts_for(choice, master)
        if not conflicts:
            break
        counts = _per_drone_counts(conflicts)
        ranked = sorted(
            (d for d in slaves if counts.get(d, (0, 0)) > (0, 0)),
            key=lambda d: (-counts[d][0], -counts[d][1], d))
        ranked = [d for d in ranked if d not in stuck]
        if not ranked:
            break
        ident = ranked[0]
        fi = _best_framing(cand, choice, ident, master)
        if fi is None or fi == choice[ident]:
            stuck.add(ident)
            continue
        choice[ident] = fi
        stuck.clear()
    return choice


def min_conflict_assign(views, catalog, ctx: CoordinationContext,
                        max_steps: int = 60,
                        current: Assignment | None = None) -> Assignment:
    """Assign a framing to every drone by min-conflict local search.

    When `current` pins the master's framing only the slaves move;
    otherwise every usable master framing is tried and the best resulting
    assignment wins by (hard conflicts, soft conflicts, total path cost).
    Fully deterministic: ties fall back to path cost, then catalog order,
    then drone id. `max_steps` bounds the slave sweeps per master option.
    """
    views = sorted(views, key=lambda v: v.ident)
    masters = [v.ident for v in views if v.role == "master"]
    if len(masters) != 1:
        raise ValueError("exactly one drone must have the master role")
    master = masters[0]
    slaves = [v.ident for v in views if v.ident != master]
    cand = _Candidates(views, catalog, ctx)
    name_to_idx = {f.name: i for i, f in enumerate(cand.catalog)}

    seeds = {}
    if current is not None:
        for ident, inst in current.framings.items():
            if inst is not None:
                fi = name_to_idx.get(inst.framing.name)
                if fi is not None and cand.usable(fi):
                    seeds[ident] = fi

    if master in seeds:
        master_options = [seeds[master]]
    else:
        master_options = [fi for fi in range(len(cand.catalog))
                          if cand.usable(fi)
                          and np.isfinite(cand.cost(master, fi))]
        if not master_options:
            raise ValueError("no framing is reachable for the master")

    best_choice = None
    best_key = None
    for mfi in master_options:
        choice = _search_slaves(cand, master, mfi, slaves, seeds, max_steps)
        h, s, total = cand.score(choice, master)
        key = (h, s, total, mfi)
        if best_key is None or key < best_key:
            best_choice, best_key = choice, key
    return cand.assignment_for(best_choice, master)


def local_repair(assignment: Assignment, new_conflicts, views, catalog,
                 ctx: CoordinationContext) -> Assignment:
    """Fix a conflicted assignment touching only drones in the transitive
    conflict closure.

    Slaves named in the conflicts are visited most-conflicted first; a
    pure region-partial master-visibility conflict moves the destination
    into the clear subvolume of the same framing, anything else reassigns
    via min-conflict. Newly conflicted slaves join the queue; each slave
    is visited at most once; the master is never reassigned.
    """
    if not new_conflicts:
        return assignment
    views = sorted(views, key=lambda v: v.ident)
    master = assignment.master
    cand = _Candidates(views, catalog, ctx)
    name_to_idx = {f.name: i for i, f in enumerate(cand.catalog)}

    choice = {}
    for ident, inst in assignment.framings.items():
        fi = name_to_idx.get(inst.framing.name) if inst is not None else None
        if fi is not None and cand.usable(fi):
            choice[ident] = fi

    pending = []
    for c in new_conflicts:
        for ident in c.drones:
            if ident != master and ident in choice and ident not in pending:
                pending.append(ident)
    visited = set()
    touched = set()
    conflicts = cand.conflicts_for(choice, master)
    while pending and conflicts:
        counts = _per_drone_counts(conflicts)
        pending.sort(key=lambda d: (-counts.get(d, (0, 0))[0],
                                    -counts.get(d, (0, 0))[1], d))
        ident = pending.pop(0)
        if ident in visited:
            continue
        visited.add(ident)

        mine = [c for c in conflicts if ident in c.drones]
        if not mine:
            continue
        # Master-visibility conflicts alone mean the goal sits in the
        # master's view; when the framing box still has clear space the
        # cheap fix is moving the goal there instead of reassigning.
        vis_only = all(c.kind is ConflictKind.MASTER_VISIBILITY
                       and c.detail in ("position", "region-partial")
                       for c in mine)
        repaired = False
        if vis_only and master in choice:
            fi = choice[ident]
            mfrustum = cand.placement(master, choice[master])[2]
            vis = region_frustum_visibility(cand.instances[fi], mfrustum)
            if vis.coverage is Coverage.PARTIAL \
                    and vis.clear_center is not None:
                cand.set_override(ident, fi, vis.clear_center)
                if np.isfinite(cand.cost(ident, fi)):
                    touched.add(ident)
                    repaired = True
                else:
                    cand.clear_override(ident)
        if not repaired:
            fi = _best_framing(cand, choice, ident, master)
            if fi is not None and fi != choice[ident]:
                choice[ident] = fi
                touched.add(ident)

        conflicts = cand.conflicts_for(choice, master)
        counts = _per_drone_counts(conflicts)
        for d in sorted(counts):
            if d != master and d not in visited and d not in pending \
                    and d in choice:
                pending.append(d)

    repaired_assignment = cand.assignment_for(choice, master)
    # drones outside the conflict closure keep their exact entries
    for ident in assignment.framings:
        if ident in touched or ident not in repaired_assignment.framings:
            continue
        same = choice.get(ident) is not None and \
            cand.catalog[choice[ident]].name \
            == assignment.framings[ident].framing.name
        if same:
            repaired_assignment.framings[ident] = assignment.framings[ident]
            repaired_assignment.destinations[ident] = \
                assignment.destinations[ident]
            repaired_assignment.dts_points[ident] = \
                assignment.dts_points[ident]
            repaired_assignment.costs[ident] = assignment.costs[ident]
    return repaired_assignment


def switch_master(assignment: Assignment, new_master: str, views, catalog,
                  ctx: CoordinationContext, obstacles=()) -> Assignment:
    """Swap the master role onto a ready slave, retag the roadmap for the
    new master's frustum, and repair any conflicts the swap created."""
    views = sorted(views, key=lambda v: v.ident)
    by_id = {v.ident: v for v in views}
    if new_master not in by_id or new_master not in assignment.framings:
        raise KeyError(new_master)
    if new_master == assignment.master:
        return assignment
    live = detect_conflicts(views, assignment, ctx.config)
    if any(c.hard and new_master in c.drones for c in live):
        raise ValueError(f"drone {new_master!r} has hard conflicts")

    out = assignment.copy()
    out.master = new_master
    new_frustum = by_id[new_master].frustum
    frustums = [new_frustum] if new_frustum is not None else []
    update_dynamic(ctx.roadmap, list(obstacles), frustums)

    conflicts = detect_conflicts(views, out, ctx.config)
    if conflicts:
        out = local_repair(out, conflicts, views, catalog, ctx)
    return out
