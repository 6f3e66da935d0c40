"""The whole defense loop on the synthetic benchmark, with the numbers that
matter printed at each stage.

Storyline: a model trained on the untrusted set is fully backdoored (every
triggered probe lands on the attacker's target class). Sanitizing the set and
retraining kills the attack without costing clean accuracy. The persisted
budget then guards single queries at inference time.
"""

from backdoorlab import (
    EnsembleConfig,
    OracleDetector,
    PipelineConfig,
    RecoveryConfig,
    TrainConfig,
    attack_success_rate,
    clean_accuracy,
    guard_inference,
    make_patch_benchmark,
    sanitize,
    train,
)
from backdoorlab.images import LabeledSample, Provenance
from backdoorlab.poisoning import apply_patch

bench = make_patch_benchmark(seed=7)
tcfg = TrainConfig(epochs=40, seed=1)

backdoored = train(bench.train_untrusted, tcfg).model
print("before defense:")
print(f"  attack success on triggered probes: {attack_success_rate(backdoored, bench.probes, bench.target_class):.0%}")
print(f"  clean test accuracy:                {clean_accuracy(backdoored, bench.clean_test):.0%}")

cfg = PipelineConfig(
    EnsembleConfig((OracleDetector(),), threshold=1),
    recovery=RecoveryConfig(steps=200),
    trainer=tcfg,
)
cleaned, report = sanitize(bench.train_untrusted, None, cfg)
print("\nsanitization:")
print(f"  flagged {report.flagged}, recovered {report.recovered}, failed {report.failed}")
print(f"  probed delta_max {report.budget.delta_max:.3f} -> budget eps {report.budget.epsilon:.3f}")
print(f"  timings: { {k: round(v, 2) for k, v in report.timings.items()} }")

defended = train(cleaned, tcfg).model
baseline = train(bench.train_clean, tcfg).model
print("\nafter retraining on the sanitized set:")
print(f"  attack success: {attack_success_rate(defended, bench.probes, bench.target_class):.0%}")
print(f"  clean accuracy: {clean_accuracy(defended, bench.clean_test):.0%} "
      f"(never-poisoned baseline {clean_accuracy(baseline, bench.clean_test):.0%})")

# inference-time guard reuses the training-time budget
guard_cfg = cfg.for_inference(report.budget)
clean_query = bench.clean_test[0]
triggered_query = LabeledSample(
    apply_patch(bench.clean_test[0].image, bench.trigger),
    bench.clean_test[0].label,
    Provenance.POISONED,
)
for name, query in (("clean", clean_query), ("triggered", triggered_query)):
    _, verdict, label = guard_inference(query, defended, guard_cfg)
    print(f"\nguarded {name} query -> verdict {verdict.value.value}, classified as {label} "
          f"(true {query.label})")
