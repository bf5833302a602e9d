"""From a synthetic fundus-like scene to lesion candidates.

Renders one scene with five dark lesions, three vessels and some bright
and dark distractors, runs normalization, gradient weighting and the
threshold sweep, and reports which lesions were picked up.  Writes the
scene and a candidate overlay next to this script.

    python gallery/02_candidates_on_a_scene.py
"""
from pathlib import Path

import numpy as np

from madetect import synthetic as S
from madetect.image import save_image
from madetect.pipeline import PipelineConfig, process_image

out = Path(__file__).with_suffix("")
out.mkdir(exist_ok=True)

spec = S.random_scene(np.random.default_rng(11), n_bright=10, n_blotches=3)
rgb, truth = S.render(spec)
res = process_image(rgb, PipelineConfig())
print(f"{len(res.candidates)} candidates, {len(truth.points)} lesions")

for x, y, rad in truth.points:
    found = [c for c in res.candidates if c.filled_contains(x, y)]
    tag = f"candidate of {found[0].area} px" if found else "missed"
    print(f"  lesion at ({x:5.1f}, {y:5.1f}) r={rad:.1f}: {tag}")

overlay = rgb.copy()
for c in res.candidates:
    overlay[c.ys, c.xs] = (255, 255, 0)
save_image(out / "scene.png", rgb)
save_image(out / "candidates.png", overlay)
print(f"images written to {out}/")
