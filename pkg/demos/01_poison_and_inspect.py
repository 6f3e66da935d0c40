"""Build a synthetic identity dataset, embed triggers three ways, and write
PNGs you can eyeball.

Outputs land in demos/out/01/: clean vs patched vs makeup vs feature-collision
samples, side by side.
"""

from pathlib import Path

import numpy as np

from backdoorlab import (
    HiddenTriggerConfig,
    MakeupSpec,
    PatchTrigger,
    TrainConfig,
    apply_patch,
    blend_makeup,
    checker_pattern,
    gen_synthetic_identities,
    hidden_trigger_poison,
    linf_distance,
    train,
    write_png,
)
from backdoorlab.images import Image

OUT = Path(__file__).parent / "out" / "01"
OUT.mkdir(parents=True, exist_ok=True)

dims = (24, 24, 3)
data = gen_synthetic_identities(num_classes=3, per_class=30, dims=dims, noise_sigma=0.05, seed=42)
source = next(s for s in data if s.label == 1)
target = next(s for s in data if s.label == 0)
write_png(source.image, OUT / "clean_source.png")
write_png(target.image, OUT / "clean_target.png")

# 1. stamped patch: visible, high contrast
trigger = PatchTrigger(checker_pattern(6, 6, 3, amplitude=0.5), position=(2, 2), opacity=1.0)
patched = apply_patch(source.image, trigger)
write_png(patched, OUT / "patched.png")
print(f"patch      moved {linf_distance(patched, source.image):.3f} in sup norm")

# 2. makeup-style blend: only the masked region changes
mask = np.zeros(dims, dtype=np.float32)
mask[14:20, 6:18, :] = 1.0  # a "lipstick" band
pattern = Image(np.full(dims, 0.8, dtype=np.float32))
made_up = blend_makeup(source.image, MakeupSpec(Image(mask), pattern))
write_png(made_up, OUT / "makeup.png")
print(f"makeup     moved {linf_distance(made_up, source.image):.3f} in sup norm")

# 3. feature collision: looks like the target, encodes the patched source
model = train(data, TrainConfig(epochs=30, seed=0)).model
z = hidden_trigger_poison(
    model, target.image, source.image, trigger,
    HiddenTriggerConfig(pixel_budget=16 / 255, steps=80, step_size=0.05),
)
write_png(z, OUT / "feature_collision.png")
print(f"collision  moved {linf_distance(z, target.image):.3f} from the target image")
print(f"           (pixel budget was {16 / 255:.3f}; the crafted sample hides in plain sight)")
print(f"wrote images to {OUT}")
