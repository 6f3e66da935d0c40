"""Trigger injection: additive patches, binary-mask makeup blending, and
feature-collision poisoning.

The image operations here never touch labels. Dataset assembly (the
poison_with_* helpers) stores every poisoned sample under the target class,
replacing the victim entry in place so dataset size and order are preserved.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as bio
from .classifier import Model, NonFiniteGradient, feature_gap_and_gradient, features
from .images import Dataset, Image, LabeledSample, Provenance, clip_to_ball_and_range


@dataclass(frozen=True)
class PatchTrigger:
    """A small pattern image stamped at (row, col) with the given opacity."""

    pattern: Image
    position: tuple
    opacity: float = 1.0

    def __post_init__(self):
        r, c = self.position
        if r < 0 or c < 0:
            raise ValueError("patch position must be non-negative")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError(f"opacity must be in (0, 1], got {self.opacity}")


@dataclass(frozen=True)
class MakeupSpec:
    """Binary mask plus a full-size pattern; masked pixels take the pattern."""

    mask: Image
    pattern: Image

    def __post_init__(self):
        if self.mask.shape != self.pattern.shape:
            raise ValueError("mask and pattern must share dimensions")
        vals = np.unique(self.mask.data)
        if not np.all(np.isin(vals, (np.float32(0.0), np.float32(1.0)))):
            raise ValueError("mask must be strictly binary (0/1 values)")


@dataclass(frozen=True)
class HiddenTriggerConfig:
    pixel_budget: float = 16.0 / 255.0
    steps: int = 100
    step_size: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.pixel_budget <= 1.0:
            raise ValueError("pixel_budget must be in [0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def apply_patch(x: Image, trig: PatchTrigger) -> Image:
    """Blend the trigger pattern over its footprint: (1-opacity)*x + opacity*pattern."""
    r, c = trig.position
    ph, pw, pc = trig.pattern.shape
    if pc != x.channels:
        raise ValueError(f"patch has {pc} channels, image has {x.channels}")
    if r + ph > x.height or c + pw > x.width:
        raise ValueError(
            f"patch {ph}x{pw} at ({r}, {c}) exceeds image {x.height}x{x.width}"
        )
    out = x.data.copy()
    o = np.float32(trig.opacity)
    region = out[r : r + ph, c : c + pw, :]
    out[r : r + ph, c : c + pw, :] = (np.float32(1.0) - o) * region + o * trig.pattern.data
    return Image(np.clip(out, 0.0, 1.0))


def blend_makeup(x_s: Image, spec: MakeupSpec) -> Image:
    """Pixelwise selection: pattern where the mask is 1, the source elsewhere."""
    if x_s.shape != spec.mask.shape:
        raise ValueError(f"image {x_s.shape} and mask {spec.mask.shape} differ")
    out = np.where(spec.mask.data == np.float32(1.0), spec.pattern.data, x_s.data)
    return Image(out)


def hidden_trigger_poison(
    model: Model, t: Image, s: Image, trig: PatchTrigger, cfg: HiddenTriggerConfig
) -> Image:
    """Craft an image near the target t whose features match the patched source.

    Starts at t and runs projected gradient descent on the squared feature
    distance to apply_patch(s, trig), projecting every step into the
    pixel_budget ball around t intersected with [0, 1]. Steps that would
    increase the objective are retried with a halved step size, so the
    feature distance never increases.
    """
    if t.shape != s.shape or t.shape != tuple(model.input_dims):
        raise ValueError("target, source, and model dimensions must all match")
    patched_source = apply_patch(s, trig)
    anchor_features = features(model, patched_source)

    z = t.data.copy()
    gap, _ = feature_gap_and_gradient(model, z, anchor_features)
    step = float(cfg.step_size)
    for _ in range(cfg.steps):
        _, grad = feature_gap_and_gradient(model, z, anchor_features)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("feature gradient is non-finite")
        moved = False
        for _ in range(30):
            cand = clip_to_ball_and_range(
                z - np.float32(step) * grad.astype(np.float32), t.data, cfg.pixel_budget
            )
            cand_gap, _ = feature_gap_and_gradient(model, cand, anchor_features)
            if cand_gap <= gap:
                z, gap, moved = cand, cand_gap, True
                break
            step *= 0.5
        if not moved:
            break
    return Image(z)


def checker_pattern(rows: int, cols: int, channels: int, amplitude: float = 0.5, base: float = 0.5) -> Image:
    """High-contrast checkerboard around base, used as the stock patch pattern."""
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    sign = np.where((ii + jj) % 2 == 0, 1.0, -1.0)
    plane = np.clip(base + amplitude * sign, 0.0, 1.0).astype(np.float32)
    return Image(np.repeat(plane[:, :, None], channels, axis=2))


def select_poison_indices(data: Dataset, class_index: int, rate: float) -> list:
    """First ceil(rate * n) dataset positions of the given class, in order."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    members = [i for i, s in enumerate(data) if s.label == class_index]
    if not members:
        raise ValueError(f"no samples of class {class_index}")
    return members[: math.ceil(rate * len(members))]


@dataclass(frozen=True)
class PoisonPlan:
    """Replayable record of one poisoning run."""

    method: str  # "patch" | "makeup" | "hidden_trigger"
    source_class: int
    target_class: int
    entries: tuple  # dicts: index (replaced position) plus per-sample parameters
    opacity: float = 1.0
    hidden: dict | None = None  # pixel_budget / steps / step_size for hidden_trigger


def _check_classes(data: Dataset, source_class: int, target_class: int):
    if source_class == target_class:
        raise ValueError("source and target class must differ")
    for name, k in (("source", source_class), ("target", target_class)):
        if not 0 <= k < data.num_classes:
            raise ValueError(f"{name} class {k} out of range")


def poison_with_patch(
    data: Dataset, source_class: int, target_class: int, rate: float, trig: PatchTrigger
):
    """Patch the first rate-share of source-class images and store them under
    the target label, replacing each victim entry in place."""
    _check_classes(data, source_class, target_class)
    chosen = select_poison_indices(data, source_class, rate)
    samples = list(data.samples)
    entries = []
    for i in chosen:
        poisoned = apply_patch(samples[i].image, trig)
        samples[i] = LabeledSample(poisoned, target_class, Provenance.POISONED)
        entries.append({"index": i, "position": list(trig.position)})
    plan = PoisonPlan("patch", source_class, target_class, tuple(entries), opacity=trig.opacity)
    return data.replace_samples(samples), plan


def poison_with_makeup(
    data: Dataset, source_class: int, target_class: int, rate: float, spec: MakeupSpec
):
    _check_classes(data, source_class, target_class)
    chosen = select_poison_indices(data, source_class, rate)
    samples = list(data.samples)
    entries = []
    for i in chosen:
        poisoned = blend_makeup(samples[i].image, spec)
        samples[i] = LabeledSample(poisoned, target_class, Provenance.POISONED)
        entries.append({"index": i})
    plan = PoisonPlan("makeup", source_class, target_class, tuple(entries))
    return data.replace_samples(samples), plan


def poison_with_hidden_trigger(
    data: Dataset,
    model: Model,
    source_class: int,
    target_class: int,
    rate: float,
    trig: PatchTrigger,
    cfg: HiddenTriggerConfig,
):
    """Feature-collision poisoning: each selected source image is paired with a
    target-class image; the crafted sample replaces the target entry (its pixels
    stay close to the target image, so the stored target label is clean)."""
    _check_classes(data, source_class, target_class)
    sources = select_poison_indices(data, source_class, rate)
    targets = [i for i, s in enumerate(data) if s.label == target_class]
    if len(targets) < len(sources):
        raise ValueError(
            f"target class {target_class} has {len(targets)} samples, need {len(sources)}"
        )
    samples = list(data.samples)
    entries = []
    for si, ti in zip(sources, targets):
        z = hidden_trigger_poison(model, samples[ti].image, data[si].image, trig, cfg)
        samples[ti] = LabeledSample(z, target_class, Provenance.POISONED)
        entries.append({"index": ti, "source_index": si, "position": list(trig.position)})
    plan = PoisonPlan(
        "hidden_trigger",
        source_class,
        target_class,
        tuple(entries),
        opacity=trig.opacity,
        hidden={
            "pixel_budget": cfg.pixel_budget,
            "steps": cfg.steps,
            "step_size": cfg.step_size,
        },
    )
    return data.replace_samples(samples), plan


def save_plan(plan: PoisonPlan, directory, pattern: Image | None = None, mask: Image | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "method": plan.method,
        "source_class": plan.source_class,
        "target_class": plan.target_class,
        "opacity": plan.opacity,
        "entries": list(plan.entries),
        "hidden": plan.hidden,
        "pattern_file": "pattern.bft" if pattern is not None else None,
        "mask_file": "mask.bft" if mask is not None else None,
    }
    if pattern is not None:
        bio.write_image(pattern, directory / "pattern.bft")
    if mask is not None:
        bio.write_image(mask, directory / "mask.bft")
    (directory / "plan.json").write_text(json.dumps(doc, indent=2))


def replay_plan(data: Dataset, directory, model: Model | None = None) -> Dataset:
    """Re-apply a saved plan to a dataset, reproducing the poisoned set exactly."""
    directory = Path(directory)
    doc = json.loads((directory / "plan.json").read_text())
    pattern = bio.read_image(directory / doc["pattern_file"]) if doc["pattern_file"] else None
    mask = bio.read_image(directory / doc["mask_file"]) if doc["mask_file"] else None
    samples = list(data.samples)
    target = doc["target_class"]
    if doc["method"] == "patch":
        for e in doc["entries"]:
            trig = PatchTrigger(pattern, tuple(e["position"]), doc["opacity"])
            samples[e["index"]] = LabeledSample(
                apply_patch(data[e["index"]].image, trig), target, Provenance.POISONED
            )
    elif doc["method"] == "makeup":
        spec = MakeupSpec(mask, pattern)
        for e in doc["entries"]:
            samples[e["index"]] = LabeledSample(
                blend_makeup(data[e["index"]].image, spec), target, Provenance.POISONED
            )
    elif doc["method"] == "hidden_trigger":
        if model is None:
            raise ValueError("hidden_trigger replay needs the crafting model")
        h = doc["hidden"]
        cfg = HiddenTriggerConfig(h["pixel_budget"], h["steps"], h["step_size"])
        for e in doc["entries"]:
            trig = PatchTrigger(pattern, tuple(e["position"]), doc["opacity"])
            z = hidden_trigger_poison(
                model, data[e["index"]].image, data[e["source_index"]].image, trig, cfg
            )
            samples[e["index"]] = LabeledSample(z, target, Provenance.POISONED)
    else:
        raise ValueError(f"unknown poisoning method {doc['method']!r}")
    return data.replace_samples(samples)
