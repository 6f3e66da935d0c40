"""Reproduce the bundled reference metric tables and show the convention.

The positive class here is CLEAN: precision asks "of the samples we kept, how
many were really clean", recall asks "of the truly clean, how many did we
keep". Accuracy is direction-free; precision and recall are not.
"""

from backdoorlab.metrics import (
    REFERENCE_BUDGETS,
    REFERENCE_COUNTS,
    metric_table,
    metrics,
    row_percentages,
)
from backdoorlab.recovery import compute_budget

for dataset, counts in REFERENCE_COUNTS.items():
    print(f"\n{dataset}: accuracy / precision / recall / f1 (%)")
    for row in metric_table(counts):
        print(
            f"  {row['name']:>16}: {row['accuracy']:6.2f} {row['precision']:6.2f} "
            f"{row['recall']:6.2f} {row['f1']:6.2f}"
        )
    pct = row_percentages(counts["majority_vote"])
    print(f"  majority outcome shares: tp {pct['tp_pct']}%  tn {pct['tn_pct']}%  "
          f"fp {pct['fp_pct']}%  fn {pct['fn_pct']}%")

print("\ndirection matters for precision/recall, not accuracy:")
c = REFERENCE_COUNTS["pubfig"]["grok"]
a, b = metrics(c), metrics(c.swapped_positive())
print(f"  clean-positive:    precision {a.precision:.4f} recall {a.recall:.4f} accuracy {a.accuracy:.4f}")
print(f"  poisoned-positive: precision {b.precision:.4f} recall {b.recall:.4f} accuracy {b.accuracy:.4f}")

print("\nreference recovery budgets derived from probed magnitudes:")
for name, point in REFERENCE_BUDGETS.items():
    b = compute_budget(point["delta_max"], point["safety_margin"], point["steps"])
    print(f"  {name:>8}: delta_max {point['delta_max']:.2f} -> eps {b.epsilon:.4f}, alpha {b.alpha:.6f}")
