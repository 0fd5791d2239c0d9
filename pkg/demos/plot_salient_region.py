"""
Entropy-driven salient region
=============================

The garment is reduced to 8-bit luma, a 5x5 Shannon entropy map picks out
textured areas, and a box grown around their centroid is cropped and
resized.  Plain garments fall back to a box at the image centre.
"""

import sys
from pathlib import Path

import numpy as np

from itamdt.sre import SreParams, entropy_map, extract_salient, normalized_entropy_image, to_gray8
from itamdt.synth import gen_pair
from itamdt.tensor_io import save_png

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")

# find a garment with a printed motif and one without
with_motif = next(gen_pair(0, i) for i in range(100) if gen_pair(0, i).motif)
plain = next(gen_pair(0, i) for i in range(100) if gen_pair(0, i).motif is None)

for name, sample in (("motif", with_motif), ("plain", plain)):
    r = extract_salient(sample.garment)
    emap = entropy_map(to_gray8(sample.garment))
    print(f"{name}: bbox {r.bbox}, threshold {r.used_threshold:.2f}, fallback {r.fallback_used}, "
          f"peak entropy {emap.max():.3f} bits")
    if sample.motif:
        print("  generator motif bbox", sample.motif["bbox"])
    # outline the box on the garment
    framed = sample.garment.copy()
    x0, y0, w, h = r.bbox
    framed[:, y0, x0:x0 + w] = framed[:, y0 + h - 1, x0:x0 + w] = [[1], [0], [0]]
    framed[:, y0:y0 + h, x0] = framed[:, y0:y0 + h, x0 + w - 1] = [[1], [0], [0]]
    save_png(out / f"sre_{name}_box.png", framed)
    save_png(out / f"sre_{name}_entropy.png", normalized_entropy_image(sample.garment)[None])
    save_png(out / f"sre_{name}_crop.png", r.crop)

# thresholding raw bits instead of the peak-normalised map
r = extract_salient(with_motif.garment, SreParams(normalize=False))
print("raw-bit thresholding:", r.bbox, r.used_threshold, r.fallback_used)
