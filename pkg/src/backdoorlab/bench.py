"""Synthetic patched-trigger benchmark used by tests, demos, and the CLI.

The construction: identity classes from the synthetic generator, a
high-contrast checkered patch stamped on a share of one class's training
images, and those samples stored under the attack's target label. Held-out
source-class images with the same patch serve as triggered probes; a disjoint
clean split measures ordinary accuracy. A model fit on the untrusted set
learns the patch as target-class evidence, which is exactly the association
sanitization must erase.
"""

from dataclasses import dataclass

import numpy as np

from .classifier import predict_batch
from .images import Dataset, LabeledSample, Provenance, gen_synthetic_identities
from .poisoning import PatchTrigger, PoisonPlan, apply_patch, checker_pattern, poison_with_patch


@dataclass(frozen=True)
class PatchBenchmark:
    train_untrusted: Dataset  # training set with poisoned entries
    train_clean: Dataset  # identical split, never poisoned
    clean_test: Dataset  # held-out clean samples
    probes: tuple  # held-out source-class samples wearing the trigger
    trigger: PatchTrigger
    source_class: int
    target_class: int
    plan: PoisonPlan


def make_patch_benchmark(
    num_classes: int = 3,
    per_class: int = 100,
    dims: tuple = (12, 12, 3),
    noise_sigma: float = 0.05,
    poison_rate: float = 0.1,
    patch_side: int = 4,
    amplitude: float = 0.5,
    opacity: float = 1.0,
    source_class: int = 1,
    target_class: int = 0,
    probe_count: int = 50,
    test_per_class: int = 30,
    seed: int = 0,
) -> PatchBenchmark:
    """Build the full benchmark from one seed.

    The generator produces per_class + test_per_class + probe_count samples
    per class; the first block trains, the second is the clean test split,
    and the probe block (source class only) wears the trigger.
    """
    block = per_class + test_per_class + probe_count
    pool = gen_synthetic_identities(num_classes, block, dims, noise_sigma, seed)

    train, test, probe_pool = [], [], []
    for k in range(num_classes):
        base = k * block
        train.extend(pool.samples[base : base + per_class])
        test.extend(pool.samples[base + per_class : base + per_class + test_per_class])
        if k == source_class:
            probe_pool.extend(pool.samples[base + per_class + test_per_class : base + block])

    train_clean = Dataset(tuple(train), num_classes, name="bench-train")
    clean_test = Dataset(tuple(test), num_classes, name="bench-test")

    trigger = PatchTrigger(
        checker_pattern(patch_side, patch_side, dims[2], amplitude=amplitude),
        position=(1, 1),
        opacity=opacity,
    )
    train_untrusted, plan = poison_with_patch(
        train_clean, source_class, target_class, poison_rate, trigger
    )
    probes = tuple(
        LabeledSample(apply_patch(s.image, trigger), source_class, Provenance.POISONED)
        for s in probe_pool
    )
    return PatchBenchmark(
        train_untrusted,
        train_clean,
        clean_test,
        probes,
        trigger,
        source_class,
        target_class,
        plan,
    )


def clean_accuracy(model, data: Dataset) -> float:
    preds = predict_batch(model, [s.image for s in data])
    labels = np.array([s.label for s in data])
    return float((preds == labels).mean())
