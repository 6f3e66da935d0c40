"""Detection metrics, attack-success evaluation, and noise statistics.

Convention throughout: the positive class is CLEAN. TP counts clean samples
kept clean, TN poisoned samples caught, FP clean samples wrongly flagged,
FN poisoned samples missed. Derived metrics use exactly:

    accuracy  = (TP + TN) / total      precision = TP / (TP + FP)
    recall    = TP / (TP + FN)         f1 = 2 PR / (P + R)

with zero denominators reported as 0 and flagged. Percentages render with
two decimals, rounding half up.
"""

import csv
import io as _io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .classifier import Model, predict_batch
from .images import Provenance


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int  # clean -> clean
    tn: int  # poisoned -> poisoned
    fp: int  # clean -> poisoned
    fn: int  # poisoned -> clean

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def clean_total(self) -> int:
        return self.tp + self.fp

    @property
    def poisoned_total(self) -> int:
        return self.tn + self.fn

    def swapped_positive(self) -> "ConfusionCounts":
        """The same outcomes with poisoned treated as the positive class."""
        return ConfusionCounts(self.tn, self.tp, self.fn, self.fp)


@dataclass(frozen=True)
class MetricSet:
    """Fractions in [0, 1]; `undefined` names metrics whose denominator was zero."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: frozenset = field(default_factory=frozenset)

    def as_percentages(self) -> dict:
        return {
            "accuracy": percent(self.accuracy),
            "precision": percent(self.precision),
            "recall": percent(self.recall),
            "f1": percent(self.f1),
        }


def percent(fraction: float) -> float:
    """Fraction -> percentage with two decimals, half-up."""
    return float(Decimal(fraction * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_percent(fraction: float) -> str:
    return f"{percent(fraction):.2f}"


def _truth_is_poisoned(provenance: Provenance) -> bool:
    return provenance is Provenance.POISONED


def confusion(records) -> ConfusionCounts:
    """Fold detection records with ground truth into confusion counts.

    Recovered provenance counts as clean ground truth: the sample no longer
    carries a live trigger.
    """
    tp = tn = fp = fn = 0
    for r in records:
        if r.truth is None:
            raise ValueError(f"record {r.index} has no ground truth")
        flagged = r.aggregate.is_poisoned
        if _truth_is_poisoned(r.truth):
            tn += flagged
            fn += not flagged
        else:
            fp += flagged
            tp += not flagged
    return ConfusionCounts(tp, tn, fp, fn)


def metrics(c: ConfusionCounts) -> MetricSet:
    if c.total == 0:
        raise ValueError("empty confusion counts")
    undefined = set()

    def ratio(num, den, name):
        if den == 0:
            undefined.add(name)
            return 0.0
        return num / den

    accuracy = (c.tp + c.tn) / c.total
    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    if precision + recall == 0:
        undefined.add("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricSet(accuracy, precision, recall, f1, frozenset(undefined))


def row_percentages(c: ConfusionCounts) -> dict:
    """Row-normalized outcome shares: TP/FP over the clean row, TN/FN over the
    poisoned row. This is the breakdown format the reference tables use."""
    def ratio(num, den):
        return num / den if den else 0.0

    return {
        "tp_pct": percent(ratio(c.tp, c.clean_total)),
        "tn_pct": percent(ratio(c.tn, c.poisoned_total)),
        "fp_pct": percent(ratio(c.fp, c.clean_total)),
        "fn_pct": percent(ratio(c.fn, c.poisoned_total)),
    }


def attack_success_rate(model: Model, triggered_probes, target_class: int) -> float:
    """Share of triggered probes the model assigns to the attack's target class."""
    probes = list(triggered_probes)
    if not probes:
        raise ValueError("attack_success_rate needs at least one probe")
    preds = predict_batch(model, [p.image for p in probes])
    return float(np.mean(preds == target_class))


@dataclass(frozen=True)
class NoiseStats:
    mean_rho_inf: float
    mean_rho_2: float
    hist_rho_inf: tuple  # (counts, bin_edges) over [0, epsilon]
    hist_rho_2: tuple


def noise_stats(results, epsilon: float) -> NoiseStats:
    """Means and fixed-bin histograms of the corrective noise norms.

    The sup-norm histogram uses 20 bins over [0, epsilon]; the Euclidean one
    uses 20 bins over [0, max observed].
    """
    results = [r for r in results if r is not None]
    if not results:
        raise ValueError("noise_stats needs at least one result")
    rho_inf = np.array([r.rho_inf for r in results])
    rho_2 = np.array([r.rho_2 for r in results])
    span_inf = epsilon if epsilon > 0 else max(float(rho_inf.max()), 1e-12)
    counts_inf, edges_inf = np.histogram(rho_inf, bins=20, range=(0.0, span_inf))
    counts_2, edges_2 = np.histogram(rho_2, bins=20, range=(0.0, max(float(rho_2.max()), 1e-12)))
    return NoiseStats(
        float(rho_inf.mean()),
        float(rho_2.mean()),
        (tuple(int(v) for v in counts_inf), tuple(float(v) for v in edges_inf)),
        (tuple(int(v) for v in counts_2), tuple(float(v) for v in edges_2)),
    )


def format_noise_row(name: str, stats: NoiseStats) -> str:
    """One summary line per dataset: sup-norm mean to 4 decimals, Euclidean
    mean to 5 significant digits."""
    return f"{name}  {stats.mean_rho_inf:.4f}  {stats.mean_rho_2:.5g}"


# --- reference fixtures -------------------------------------------------
# Detection-outcome counts for three public benchmark runs (100 images each),
# per voter and for the majority vote. These parameterize simulated detectors
# and drive the `evaluate` command's fixture tables.

VOTERS = ("grok", "gemini", "claude", "chatgpt_o4_mini", "chatgpt_41", "majority_vote")

REFERENCE_COUNTS = {
    "pubfig": {
        "grok": ConfusionCounts(78, 8, 12, 2),
        "gemini": ConfusionCounts(55, 10, 35, 0),
        "claude": ConfusionCounts(47, 7, 43, 3),
        "chatgpt_o4_mini": ConfusionCounts(89, 10, 1, 0),
        "chatgpt_41": ConfusionCounts(90, 10, 0, 0),
        "majority_vote": ConfusionCounts(85, 10, 5, 0),
    },
    "lfw": {
        "grok": ConfusionCounts(66, 17, 17, 0),
        "gemini": ConfusionCounts(61, 17, 22, 0),
        "claude": ConfusionCounts(77, 17, 6, 0),
        "chatgpt_o4_mini": ConfusionCounts(83, 17, 0, 0),
        "chatgpt_41": ConfusionCounts(83, 17, 0, 0),
        "majority_vote": ConfusionCounts(82, 17, 1, 0),
    },
    "cifar10": {
        "grok": ConfusionCounts(86, 10, 4, 0),
        "gemini": ConfusionCounts(63, 10, 27, 0),
        "claude": ConfusionCounts(90, 0, 0, 10),
        "chatgpt_o4_mini": ConfusionCounts(89, 10, 1, 0),
        "chatgpt_41": ConfusionCounts(88, 10, 2, 0),
        "majority_vote": ConfusionCounts(88, 10, 2, 0),
    },
}

# Budget operating points from the same runs: probed worst-case magnitude,
# safety margin, and step count per dataset.
REFERENCE_BUDGETS = {
    "pubfig": {"delta_max": 0.52, "safety_margin": 0.05, "steps": 200},
    "lfw": {"delta_max": 0.63, "safety_margin": 0.05, "steps": 200},
    "cifar10": {"delta_max": 0.18, "safety_margin": 0.05, "steps": 200},
}


def reference_profiles(dataset: str, base_seed: int = 0):
    """DetectorProfiles with the per-voter error rates of a reference run."""
    from .detection import DetectorProfile

    counts = REFERENCE_COUNTS[dataset]
    profiles = {}
    for i, name in enumerate(VOTERS):
        if name == "majority_vote":
            continue
        c = counts[name]
        profiles[name] = DetectorProfile(
            false_positive_rate=c.fp / c.clean_total if c.clean_total else 0.0,
            false_negative_rate=c.fn / c.poisoned_total if c.poisoned_total else 0.0,
            seed=base_seed + i,
        )
    return profiles


# --- emitters ------------------------------------------------------------


def metric_table(counts_by_name: dict) -> list:
    """Rows of (name, accuracy%, precision%, recall%, f1%) for a counts dict."""
    rows = []
    for name, c in counts_by_name.items():
        m = metrics(c).as_percentages()
        rows.append(
            {
                "name": name,
                "accuracy": m["accuracy"],
                "precision": m["precision"],
                "recall": m["recall"],
                "f1": m["f1"],
            }
        )
    return rows


def table_to_csv(rows) -> str:
    if not rows:
        return ""
    out = _io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()


def table_to_json(rows) -> str:
    return json.dumps(rows, indent=2)
