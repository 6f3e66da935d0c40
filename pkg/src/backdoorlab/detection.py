"""Detector ensemble and majority-vote aggregation.

A detector is any callable taking a LabeledSample and returning a Verdict.
The aggregate flags a sample as poisoned when at least `threshold` detectors
flag it; the default threshold is ceil(M/2), so five detectors need three
agreeing votes. A detector that raises abstains: the vote counts as clean and
the failure is kept in the rationale.
"""

import enum
import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .images import Dataset, Image, LabeledSample, Provenance, linf_distance


class VerdictValue(str, enum.Enum):
    CLEAN = "clean"
    POISONED = "poisoned"


@dataclass(frozen=True)
class Verdict:
    value: VerdictValue
    rationale: str | None = None

    @classmethod
    def clean(cls, rationale: str | None = None) -> "Verdict":
        return cls(VerdictValue.CLEAN, rationale)

    @classmethod
    def poisoned(cls, rationale: str | None = None) -> "Verdict":
        return cls(VerdictValue.POISONED, rationale)

    @property
    def is_poisoned(self) -> bool:
        return self.value is VerdictValue.POISONED


@dataclass(frozen=True)
class DetectorProfile:
    """Error rates for a simulated detector: FPR flags clean as poisoned,
    FNR lets poisoned pass as clean."""

    false_positive_rate: float
    false_negative_rate: float
    seed: int = 0

    def __post_init__(self):
        for name in ("false_positive_rate", "false_negative_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class DetectionRecord:
    index: int
    truth: Provenance | None
    votes: tuple
    aggregate: Verdict

    @property
    def rationales(self) -> tuple:
        return tuple(v.rationale for v in self.votes)


def majority_vote(verdicts, threshold: int) -> Verdict:
    """Poisoned iff at least `threshold` of the verdicts say poisoned."""
    verdicts = list(verdicts)
    if not verdicts:
        raise ValueError("majority_vote needs at least one verdict")
    if not 1 <= threshold <= len(verdicts):
        raise ValueError(f"threshold {threshold} out of range for {len(verdicts)} verdicts")
    flags = sum(1 for v in verdicts if v.is_poisoned)
    if flags >= threshold:
        return Verdict.poisoned(f"{flags}/{len(verdicts)} detectors flagged")
    return Verdict.clean(f"{flags}/{len(verdicts)} detectors flagged")


def default_threshold(num_detectors: int) -> int:
    return math.ceil(num_detectors / 2)


@dataclass(frozen=True)
class EnsembleConfig:
    detectors: tuple
    threshold: int | None = None

    def __post_init__(self):
        detectors = tuple(self.detectors)
        if not detectors:
            raise ValueError("ensemble needs at least one detector")
        object.__setattr__(self, "detectors", detectors)
        thr = self.threshold if self.threshold is not None else default_threshold(len(detectors))
        if not 1 <= thr <= len(detectors):
            raise ValueError(f"threshold {thr} out of range for {len(detectors)} detectors")
        object.__setattr__(self, "threshold", thr)

    @property
    def size(self) -> int:
        return len(self.detectors)


# --- built-in detectors ---


def _sample_uniform(sample: LabeledSample, seed: int) -> float:
    """A per-sample uniform in [0, 1) derived from content, label, and seed.

    Hash-based rather than stream-based so verdicts do not depend on
    evaluation order or concurrency.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", seed))
    h.update(struct.pack("<q", sample.label))
    h.update(sample.provenance.value.encode())
    h.update(sample.image.data.tobytes())
    return int.from_bytes(h.digest(), "little") / 2.0**64


def simulated_detector(sample: LabeledSample, profile: DetectorProfile) -> Verdict:
    """Ground-truth detector with dialed-in error rates, for simulation only."""
    u = _sample_uniform(sample, profile.seed)
    if sample.provenance is Provenance.POISONED:
        if u < profile.false_negative_rate:
            return Verdict.clean("simulated miss")
        return Verdict.poisoned("simulated hit")
    if u < profile.false_positive_rate:
        return Verdict.poisoned("simulated false alarm")
    return Verdict.clean("simulated pass")


def residual_detector(x: Image, class_prototypes, threshold: float) -> Verdict:
    """Flag when the smallest sup-norm residual against any prototype exceeds
    the threshold. A concrete content-based detector needing no services."""
    protos = list(class_prototypes)
    if not protos:
        raise ValueError("residual_detector needs at least one prototype")
    best = min(linf_distance(x, p) for p in protos)
    if best > threshold:
        return Verdict.poisoned(f"min residual {best:.4f} > {threshold}")
    return Verdict.clean(f"min residual {best:.4f} <= {threshold}")


class OracleDetector:
    """Reads the provenance flag directly. Test and benchmark use only."""

    name = "oracle"

    def __call__(self, sample: LabeledSample) -> Verdict:
        if sample.provenance is Provenance.POISONED:
            return Verdict.poisoned("ground truth")
        return Verdict.clean("ground truth")


class SimulatedDetector:
    def __init__(self, profile: DetectorProfile, name: str = "simulated"):
        self.profile = profile
        self.name = name

    def __call__(self, sample: LabeledSample) -> Verdict:
        return simulated_detector(sample, self.profile)


class ResidualDetector:
    def __init__(self, class_prototypes, threshold: float = 0.25, name: str = "residual"):
        self.prototypes = list(class_prototypes)
        self.threshold = threshold
        self.name = name

    def __call__(self, sample: LabeledSample) -> Verdict:
        return residual_detector(sample.image, self.prototypes, self.threshold)


def evaluate_sample(sample: LabeledSample, index: int, cfg: EnsembleConfig) -> DetectionRecord:
    votes = []
    for det in cfg.detectors:
        try:
            votes.append(det(sample))
        except Exception as exc:  # detector failure -> abstain as clean
            votes.append(Verdict.clean(f"abstain: {type(exc).__name__}: {exc}"))
    aggregate = majority_vote(votes, cfg.threshold)
    return DetectionRecord(index, sample.provenance, tuple(votes), aggregate)


def detect_all(data: Dataset, cfg: EnsembleConfig, threads: int = 1) -> list:
    """One DetectionRecord per sample, dataset order preserved."""
    if threads <= 1:
        return [evaluate_sample(s, i, cfg) for i, s in enumerate(data)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda pair: evaluate_sample(pair[1], pair[0], cfg), enumerate(data)))


def records_to_jsonl(records) -> str:
    """One JSON object per line: index, truth, votes, aggregate, rationales."""
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "index": r.index,
                    "truth": r.truth.value if r.truth is not None else None,
                    "votes": [v.value.value for v in r.votes],
                    "aggregate": r.aggregate.value.value,
                    "rationales": list(r.rationales),
                }
            )
        )
    return "\n".join(lines) + "\n"


def records_from_jsonl(text: str) -> list:
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        votes = tuple(Verdict(VerdictValue(v)) for v in doc["votes"])
        records.append(
            DetectionRecord(
                doc["index"],
                Provenance(doc["truth"]) if doc["truth"] else None,
                votes,
                Verdict(VerdictValue(doc["aggregate"])),
            )
        )
    return records


def flagged_indices(records) -> list:
    return [r.index for r in records if r.aggregate.is_poisoned]
