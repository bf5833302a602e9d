"""Convergence filters on a dark ring and a dark ellipse outline.

Prints the three filter responses at the centre and the radii they pick.
The ring is placed by its outer radius; the ellipse shows how the sliding
band follows the outline direction by direction.

    python gallery/01_convergence_filters.py
"""
from madetect import synthetic as S
from madetect.lcf import SupportConfig, lcf_at_points

cfg = SupportConfig()
centre = [(24, 24)]

print("dark ring, outer radius r:")
for outer in (4, 7, 10):
    spec = S.SceneSpec(size=49, background="speckle", speckle=0.005, seed=outer,
                       blobs=(S.Blob(24.0, 24.0, outer - 2.0, 0.3, "annulus", width=2.0),))
    r = lcf_at_points(S.render_intensity(spec), centre, cfg)
    print(f"  r={outer:2d}  ARF {r['F_ARF'][0]:.3f} @ {r['R_ARF'][0]:.0f}   "
          f"SBF {r['F_SBF'][0]:.3f} @ {r['R_SBF'][0]:.1f}   SEF {r['F_SEF'][0]:.3f} @ {r['R_SEF'][0]:.1f}")

# outline of an ellipse with semi-axes 8 (x) and 4 (y), two pixels thick
blobs = (S.Blob(24, 24, 8, 0.3, "ellipse", a=8, b=4),
         S.Blob(24, 24, 6, 0.3, "ellipse", a=6, b=2, bright=True, annotated=False))
img = S.render_intensity(S.SceneSpec(size=49, background="speckle", speckle=0.005, blobs=blobs))
r = lcf_at_points(img, centre, cfg, with_directions=True)
print("\nellipse outline, SBF radius per direction (line 0 points along +y):")
print("  " + " ".join(f"{v:.0f}" for v in r["R_SBF_dirs"][0]))
print(f"  SEF radius {r['R_SEF'][0]:.1f}, between the semi-axes 4 and 8")

