import sys
sys.path.insert(0, "src")
import numpy as np
from cinedrone.toric import (
    Target, build_surface, toric_radius, classify_surface, SurfaceType,
    dts_coords_batch, camera_region,
)

rng = np.random.default_rng(0)

def check_surface(name, targets, alpha, d_s):
    s = build_surface(targets, alpha, d_s)
    print(f"== {name}: type={s.surface_type} r={s.r:.6f} total={s.total_length:.6f} "
          f"seams={tuple(round(f,6) for f in s.seam_fractions)} degen={s.degenerate}")
    # continuity between pieces
    for i in range(len(s.pieces) - 1):
        e = np.array(s.pieces[i].endpoint(1))
        st = np.array(s.pieces[i + 1].endpoint(0))
        assert np.allclose(e, st, atol=1e-9), (name, i, e, st)
    # landmarks
    pB = s.dts_to_world(0.3, 0.0)
    pA = s.dts_to_world(-0.7, 1.0)
    if s.surface_type != SurfaceType.SINGLE_SPHERE:
        A = targets[0].position; B = targets[1].position
        ab = (B - A); L = np.linalg.norm(ab); u = ab / L
        assert np.allclose(pB, B + d_s * u, atol=1e-9), (pB, B + d_s*u)
        assert np.allclose(pA, A - d_s * u, atol=1e-9), (pA, A - d_s*u)
        print("   landmarks ok: behind-B, behind-A on axis")
    # min distance
    md = s.min_target_distance()
    print(f"   min target distance = {md:.9f} (d_s={d_s})")
    assert md >= d_s - 1e-9
    # Monte Carlo safety + round trip
    phis = rng.uniform(-1, 1, 4000)
    thetas = rng.uniform(-1, 1, 4000)
    P = s.dts_to_world_batch(phis, thetas)
    for t in targets:
        dmin = np.linalg.norm(P - t.position, axis=1).min()
        assert dmin >= d_s - 1e-9, (name, dmin)
    # round trip scalar
    worst = 0.0
    for i in range(300):
        w = s.dts_to_world(phis[i], thetas[i])
        phi2, theta2 = s.world_to_dts(w)
        # guard: phi at s=0/1 is degenerate (h=0), skip exact poles
        if abs(abs(thetas[i]) - 0.0) < 1e-6 or abs(abs(thetas[i]) - 1.0) < 1e-6:
            continue
        w2 = s.dts_to_world(phi2, theta2)
        worst = max(worst, np.linalg.norm(w - w2))
    print(f"   round-trip worst pos error = {worst:.2e}")
    assert worst < 1e-6, worst
    # C1 at seams: finite-difference tangents
    for f in s.seam_fractions:
        eps = 1e-6
        p0 = s.dts_to_world(0.2, f - eps)
        p1 = s.dts_to_world(0.2, f + eps)
        pc = s.dts_to_world(0.2, f)
        t0 = (pc - p0) / np.linalg.norm(pc - p0)
        t1 = (p1 - pc) / np.linalg.norm(p1 - pc)
        ang = np.degrees(np.arccos(np.clip(np.dot(t0, t1), -1, 1)))
        print(f"   seam s={f:.4f}: FD tangent kink = {ang:.6f} deg")
        assert ang < 0.01, ang
    return s

A = Target(np.array([0.0, 0.0, 1.0]))
B = Target(np.array([2.0, 0.0, 1.0]))

s1 = check_surface("type1", [A, B], np.pi/6, 0.4)
s2 = check_surface("type2", [A, B], np.pi/4, 0.8)
r3 = toric_radius(np.pi/6, 2.0)
print("type3 d_s =", r3 - 1.0)
s3 = check_surface("type3", [A, B], np.pi/6, r3 - 1.0)
ssing = check_surface("single", [Target(np.array([1.0, 2.0, 1.5]), np.array([0, 0, 0.7]))], 2.0, 0.5)

# frozen worked example: alpha=pi/6, L=1, d_s=0.3
A1 = Target(np.zeros(3)); B1 = Target(np.array([1.0, 0, 0]))
sw = build_surface([A1, B1], np.pi/6, 0.3)
capA = sw.pieces[-1]
print("worked example: c=%.6f R=%.6f" % (capA.cx, capA.radius))
seam = np.array(sw.pieces[-1].endpoint(0))
print("  A-seam local (x,h) = (%.6f, %.6f), |seam-A| = %.6f" % (seam[0], seam[1], np.hypot(*seam)))

# tangency oracle for both cap types: |C-Ot| vs R +/- r
for nm, ss in (("t1", s1), ("t2", s2)):
    L = np.linalg.norm(ss.targets[1].position - ss.targets[0].position)
    k = ss.r * np.cos(ss.alpha)
    Ot = np.array([L/2, k])
    cap = ss.pieces[-1]
    C = np.array([cap.cx, 0.0])
    dist = np.linalg.norm(C - Ot)
    print(f"{nm}: |C-Ot|={dist:.9f} R+r={cap.radius+ss.r:.9f} |R-r|={abs(cap.radius-ss.r):.9f}")

# spec example: toric_radius(1, 3)
print("toric_radius(1,3) =", repr(toric_radius(1.0, 3.0)))
print("classify r=2 ab=2 ds=0.5:", classify_surface(2.0, 2.0, 0.5))
print("classify r=2 ab=2 ds=1.0:", classify_surface(2.0, 2.0, 1.0))

# batch chart vs scalar world_to_dts on safe random points
pts = rng.uniform([-3, -3, -2], [5, 3, 4], size=(4000, 3))
alpha, phi, theta, unsafe = dts_coords_batch(A.position, B.position, 0.4, pts)
ok = 0; tested = 0; worst_dphi = 0; worst_ds = 0
for i in range(4000):
    if unsafe[i] or alpha[i] >= np.pi/2 - 0.05 or alpha[i] < 0.05:
        continue
    surf = build_surface([A, B], float(alpha[i]), 0.4)
    if surf.degenerate:
        continue
    p2, t2 = surf.world_to_dts(pts[i])
    tested += 1
    worst_dphi = max(worst_dphi, abs(p2 - phi[i]))
    worst_ds = max(worst_ds, abs(abs(t2) - abs(theta[i])))
print(f"batch vs scalar: tested={tested} worst dphi={worst_dphi:.2e} worst d|theta|={worst_ds:.2e}")

# camera regions
for th, lbl in ((0.0, "external-b"), (0.3, "external-apex-b"), (0.5, "apex"),
                (-0.5, "apex"), (0.7, "external-apex-a"), (0.9, "external-a"), (1.0, "external-a")):
    got = camera_region(th).label.value
    assert got == lbl, (th, got, lbl)
print("camera regions ok")
print("ALL CHECKS PASSED")
