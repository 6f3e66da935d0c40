"""Walk the three recovery stages on flagged images: probe the worst-case
trigger magnitude, set the inflated budget, run the bounded correction.

Also shows the alternative budget modes (95th-percentile and per-image capped)
and writes recovered PNGs plus perturbation heatmaps.
"""

from pathlib import Path

import numpy as np

from backdoorlab import (
    Provenance,
    RecoveryConfig,
    TrainConfig,
    make_patch_benchmark,
    noise_stats,
    recover_set,
    train,
)
from backdoorlab.metrics import format_noise_row
from backdoorlab.recovery import write_recovery_artifacts

OUT = Path(__file__).parent / "out" / "03"

bench = make_patch_benchmark(seed=23)
flagged = [s for s in bench.train_untrusted if s.provenance is Provenance.POISONED]
believed_clean = [s for s in bench.train_untrusted if s.provenance is not Provenance.POISONED]
model = train(
    bench.train_untrusted.replace_samples(believed_clean), TrainConfig(epochs=30, seed=0)
).model

for mode in ("global_max", "percentile", "per_image_capped"):
    cfg = RecoveryConfig(steps=200, safety_margin=0.05, budget_mode=mode)
    batch = recover_set(model, flagged, cfg)
    b = batch.budget
    print(
        f"{mode:>16}: delta_max={b.delta_max:.4f} eps={b.epsilon:.4f} "
        f"alpha={b.alpha:.6f} recovered={batch.success_count}/{len(flagged)}"
    )
    if mode == "global_max":
        stats = noise_stats(batch.results, b.epsilon)
        print(f"{'':>16}  noise: {format_noise_row('bench', stats)}")
        print(f"{'':>16}  sup-norm histogram counts: {stats.hist_rho_inf[0]}")
        write_recovery_artifacts(batch, flagged, OUT)

print(f"\nper-image probe deltas: {np.round(batch.budget.per_image_deltas, 3)}")
print(
    "note: on this benchmark the probe saturates (every delta hits 1.0), so the\n"
    "three modes coincide; they differ when some images probe further than others,\n"
    "e.g. the percentile mode ignores a single outlier delta"
)
print(f"recovered tensors, PNGs, and heatmaps in {OUT}")
