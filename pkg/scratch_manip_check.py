import numpy as np

from cinedrone.manipulators import (
    avoid_collision,
    build_search_curve,
    extract_roll,
    floor_ceiling_ellipses,
    manipulate_dolly,
    manipulate_position,
    manipulate_view_angle,
    roll_for_viewpoint,
    view_angle_position,
    _substitute_fractions,
)
from cinedrone.orientation import CameraPose, FramingSpec, camera_axes, project_point
from cinedrone.toric import Target, build_surface, camera_region
from cinedrone.geometry import Aabb, SceneModel, SphereObstacle, BoxObstacle

rng = np.random.default_rng(0)

# 1. roll sign/exactness -----------------------------------------------------
print("== roll recovery ==")
worst = 0.0
for _ in range(200):
    pos = rng.normal(size=3) * 2
    yaw = rng.uniform(-np.pi, np.pi)
    tilt = rng.uniform(-1.0, 1.0)
    roll = rng.uniform(-1.2, 1.2)
    pose = CameraPose(pos, yaw, tilt, roll)
    x_c, y_c, z_c = camera_axes(yaw, tilt, roll)
    # targets in front of the camera
    t1 = pos + 3.0 * y_c + 0.8 * x_c + 0.3 * z_c
    t2 = pos + 2.5 * y_c - 0.6 * x_c - 0.4 * z_c
    s1 = project_point(t1, pose)
    s2 = project_point(t2, pose)
    assert s1 is not None and s2 is not None
    fr = FramingSpec([t1, t2], [s1, s2])
    r = roll_for_viewpoint(pos, fr)
    worst = max(worst, abs(r - roll))
print("worst |roll err|:", worst)

# extract_roll convention
x_c, y_c, z_c = camera_axes(0.3, 0.2, 0.37)
print("extract_roll:", extract_roll(x_c, y_c), "(want 0.37)")

# 2. substitution zone -------------------------------------------------------
print("== view-angle substitution ==")
a = Target(np.array([0.0, 0.0, 1.0]))
b = Target(np.array([2.0, 0.0, 1.0]))
surf = build_surface([a, b], alpha=np.pi / 6, d_s=0.4)  # r ~ 2, type 1
s_b, s_a = _substitute_fractions(surf)
print("fractions:", s_b, s_a)
# C1 across the A seam: sample world points along theta at fixed phi
phi = 0.35
ts = np.linspace(s_a - 0.02, min(s_a + 0.02, 1.0), 81)
pts = np.array([view_angle_position(surf, phi, t)[0] for t in ts])
d1 = np.diff(pts, axis=0)
ang = [
    np.degrees(np.arccos(np.clip(np.dot(d1[i] / np.linalg.norm(d1[i]), d1[i + 1] / np.linalg.norm(d1[i + 1])), -1, 1)))
    for i in range(len(d1) - 1)
]
print("max FD turn angle near seam (deg):", max(ang))
p_sub, subbed = view_angle_position(surf, phi, s_a + 0.05)
print("substituted:", subbed)
# on the plane cap: local x should be L/2 - r
xl = np.dot(p_sub - surf.origin, surf.ex)
print("plane x:", xl, "want", 1.0 - surf.r)
# safety on substitute
for t in np.linspace(0, 1, 401):
    p, _ = view_angle_position(surf, phi, t)
    dmin = min(np.linalg.norm(p - a.position), np.linalg.norm(p - b.position))
    assert dmin >= 0.4 - 1e-9, (t, dmin)
print("substituted orbit stays safe ok")

# reversibility of the orbit
r1 = manipulate_view_angle(surf, (0.2, 0.5), (0.3, 0.35))
r2 = manipulate_view_angle(surf, (r1.phi, r1.theta), (-0.3, -0.35))
print("orbit round trip:", abs(r2.phi - 0.2), abs(r2.theta - 0.5))

# 3. search curves -----------------------------------------------------------
print("== search curves ==")
start = (-0.4, 0.52)
curve = build_search_curve(None, start, ())
print("region:", curve.region, "#segs:", len(curve.segments))
# passes through start
d = np.min(np.linalg.norm(curve.sample(512) - np.array(start), axis=1))
print("min dist to start:", d)
# closure at world level needs the surface; in chart: seg1 end mirrors seg2 start
e1 = curve.segments[0].eval(1.0)
s2 = curve.segments[1].eval(0.0)
print("seg1 end:", e1, "seg2 start:", s2, "(mirror in theta expected)")
# symmetric about theta -> -theta
samp = curve.sample(256)
sym_ok = True
for p in samp[::17]:
    refl = np.array([p[0], -p[1]])
    if np.min(np.linalg.norm(samp - refl, axis=1)) > 2e-2:
        sym_ok = False
print("symmetric:", sym_ok)
# curve family closure: rebuild from an on-curve point -> same curve
p_on = curve.eval(1, 0.3)
curve2 = build_search_curve(None, p_on, ())
samp2 = curve2.sample(512)
dmax = 0.0
for p in samp[:: 16]:
    dmax = max(dmax, float(np.min(np.linalg.norm(samp2 - p, axis=1))))
print("family closure hausdorff-ish:", dmax)

# external region: lines
c3 = build_search_curve(None, (0.2, 0.1), ())
print("external segs:", [s.kind for s in c3.segments], "thetas:", [s.theta for s in c3.segments])

# 4. manipulate_position reversibility smoke ---------------------------------
print("== manipulate position ==")
fr0 = FramingSpec([a.position, b.position], [(-0.35, 0.1), (0.4, 0.05)])
res = manipulate_position(surf, start, fr0)
print("sol:", res.phi, res.theta, "roll:", res.roll)
pos2 = res.position
# inverse: frame back to the start's achieved framing
pose0_pos = surf.dts_to_world(*start)
from cinedrone.orientation import feasible_orientation
aim0 = feasible_orientation(pose0_pos, FramingSpec.centered([a.position, b.position]))
pose0 = CameraPose(pose0_pos, aim0.yaw, aim0.tilt)
s1b = project_point(a.position, pose0)
s2b = project_point(b.position, pose0)
fr_inv = FramingSpec([a.position, b.position], [s1b, s2b])
res_back = manipulate_position(surf, (res.phi, res.theta), fr_inv)
print("back:", res_back.phi, res_back.theta, "start was", start)
print("roll at back:", res_back.roll, "roll at start framing:", roll_for_viewpoint(pose0_pos, fr_inv))

# 5. ellipses ----------------------------------------------------------------
print("== floor/ceiling ellipses ==")
ells = floor_ceiling_ellipses(surf, floor_z=0.2, ceiling_z=None)
for e in ells:
    print("ellipse:", e.center, e.a, e.b)
curve_f = build_search_curve(None, start, tuple(ells))
samp_f = curve_f.sample(256)
inside = sum(1 for p in samp_f for e in ells if e.contains(p[0], p[1]))
print("interior points after clipping:", inside)
zmin = min(surf.dts_to_world(p[0], p[1])[2] for p in samp_f)
print("z min along clipped curve:", zmin)

# 6. dolly + world + avoid ----------------------------------------------------
print("== dolly/world/avoid ==")
p0 = np.array([0.0, -3.0, 1.5])
p1, cl = manipulate_dolly(p0, a.position, -1.0, d_s=0.4)
p2, cl2 = manipulate_dolly(p1, a.position, 1.0, d_s=0.4)
print("dolly round trip:", np.linalg.norm(p2 - p0), "clamped:", cl, cl2)
p3, cl3 = manipulate_dolly(p0, a.position, -10.0, d_s=0.4)
print("clamp dist:", np.linalg.norm(p3 - a.position), cl3)

scene = SceneModel(bounds=Aabb(np.array([-10.0, -10, 0]), np.array([10.0, 10, 5])),
                   primitives=[SphereObstacle(np.array([0.0, -2.0, 1.0]), 0.5)])
des = np.array([0.0, -2.0, 1.0])  # dead inside the obstacle
anc = np.array([0.0, 0.0, 1.0])
prev = np.array([0.0, -3.5, 1.0])
adj, moved = avoid_collision(des, anc, scene, prev, d_s=0.4)
print("avoid:", adj, moved, "dist to anchor:", np.linalg.norm(adj - anc))
