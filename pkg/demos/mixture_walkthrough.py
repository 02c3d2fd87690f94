"""Walk through one mixture: K=3, one extra source, (r_l, r_e, o) = (0.75, 2.0, 640).

Prints the chunk, the energy ratio and the SIL-padded target streams.
Run: python demos/mixture_walkthrough.py
"""

import numpy as np

from mixsep.audio import energy, frame_count
from mixsep.mixing import Source, chunk_scale_shift, mix

SIL = 16
rng = np.random.default_rng(0)

primary = rng.uniform(-0.2, 0.2, 3200)  # 9 frames
primary_units = rng.integers(0, SIL, frame_count(primary.size))
extra = rng.uniform(-0.2, 0.2, 3840)
extra_units = rng.integers(0, SIL, frame_count(extra.size))

placed = chunk_scale_shift(Source(extra, extra_units, False, "extra"), primary, r_l=0.75, r_e=2.0, o=640, rng=rng)
print(f"chunk: {placed.samples.size} of {extra.size} samples starting at {placed.chunk_start}, gain {placed.gain:.3f}")
print(f"energy ratio e(extra) / e(primary) = {energy(placed.samples) / energy(primary):.6f}")

m = mix(primary, primary_units, [placed], K=3, sil=SIL, primary_origin="primary")
print(f"mixture: {len(m.y_mix)} samples, {m.targets.shape[1]} frames, streams {m.provenance}")
for k, row in enumerate(m.targets, start=1):
    print(f"z{k}: " + " ".join("SIL" if v == SIL else f"{v:3d}" for v in row))
