"""End-to-end sanitization of an untrusted dataset and the inference-time guard.

Training-time: every sample is voted on by the ensemble; flagged samples are
replaced by their recovered versions (same stored label, provenance flipped to
recovered); everything else passes through bit-identical. Cardinality, order,
and labels never change. A sample whose recovery fails passes through
unmodified and is reported, never dropped.

Inference-time: a query is screened by the same ensemble; if flagged it is
corrected with the budget persisted from training (a single query has no
population to probe) before classification. The correction targets the
model's own top-1 prediction on the raw query, since a query carries no
trusted label; both predictions are surfaced to the caller via the report
fields on the returned verdict rationale.
"""

import time
from dataclasses import dataclass, field, replace

from .classifier import Model, TrainConfig, predict, train
from .detection import EnsembleConfig, Verdict, detect_all, evaluate_sample
from .images import Dataset, Image, LabeledSample, Provenance
from .recovery import BudgetResult, RecoveryBatch, RecoveryConfig, corrective_pgd, recover_set


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    ensemble: EnsembleConfig
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    mode: str = "train_time"  # train_time | inference_time
    trainer: TrainConfig = field(default_factory=TrainConfig)
    budget: BudgetResult | None = None  # persisted training-time budget

    def __post_init__(self):
        if self.mode not in ("train_time", "inference_time"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    def for_inference(self, budget: BudgetResult) -> "PipelineConfig":
        return replace(self, mode="inference_time", budget=budget)


@dataclass(frozen=True)
class SanitizationReport:
    total: int
    flagged: int
    recovered: int
    passed: int
    failed: int
    budget: BudgetResult | None
    records: tuple
    recovery: RecoveryBatch | None
    timings: dict

    def to_dict(self) -> dict:
        per_sample = []
        flagged_positions = {}
        if self.recovery is not None:
            flagged_positions = {
                r.index: j
                for j, r in enumerate(rec for rec in self.records if rec.aggregate.is_poisoned)
            }
        for rec in self.records:
            entry = {
                "index": rec.index,
                "truth": rec.truth.value if rec.truth else None,
                "votes": [v.value.value for v in rec.votes],
                "aggregate": rec.aggregate.value.value,
            }
            if rec.aggregate.is_poisoned and self.recovery is not None:
                j = flagged_positions[rec.index]
                res = self.recovery.results[j]
                if res is None:
                    entry["error"] = self.recovery.errors[j]
                else:
                    entry.update(
                        {
                            "rho_inf": res.rho_inf,
                            "rho_2": res.rho_2,
                            "iterations": res.iterations_run,
                            "success": res.success,
                        }
                    )
            per_sample.append(entry)
        return {
            "counts": {
                "total": self.total,
                "flagged": self.flagged,
                "recovered": self.recovered,
                "passed": self.passed,
                "failed": self.failed,
            },
            "budget": self.budget.to_dict() if self.budget else None,
            "timings": dict(self.timings),
            "per_sample": per_sample,
        }


def sanitize(
    untrusted: Dataset,
    model: Model | None,
    cfg: PipelineConfig,
    threads: int = 1,
):
    """Vote on every sample, recover the flagged ones, and rebuild the dataset.

    When no trusted model is supplied, the recovery classifier is trained on
    the post-vote believed-clean subset. Returns (clean_dataset, report).
    """
    timings = {}
    t0 = time.perf_counter()
    records = detect_all(untrusted, cfg.ensemble, threads=threads)
    timings["detect_s"] = time.perf_counter() - t0

    flagged_idx = [r.index for r in records if r.aggregate.is_poisoned]
    flagged_set = set(flagged_idx)

    if model is None:
        believed_clean = [s for i, s in enumerate(untrusted) if i not in flagged_set]
        if not believed_clean:
            raise ConfigurationError("every sample was flagged; no believed-clean data to train on")
        t0 = time.perf_counter()
        model = train(
            Dataset(tuple(believed_clean), untrusted.num_classes, untrusted.name), cfg.trainer
        ).model
        timings["train_s"] = time.perf_counter() - t0

    batch = None
    samples = list(untrusted.samples)
    recovered = failed = 0
    if flagged_idx:
        flagged_samples = [untrusted[i] for i in flagged_idx]
        t0 = time.perf_counter()
        batch = recover_set(model, flagged_samples, cfg.recovery, threads=threads)
        timings["recover_s"] = time.perf_counter() - t0
        for j, i in enumerate(flagged_idx):
            res = batch.results[j]
            if res is None:
                failed += 1  # flagged but unrecovered: pass through, reported
                continue
            samples[i] = LabeledSample(res.recovered, untrusted[i].label, Provenance.RECOVERED)
            recovered += 1

    clean = untrusted.replace_samples(samples)
    report = SanitizationReport(
        total=len(untrusted),
        flagged=len(flagged_idx),
        recovered=recovered,
        passed=len(untrusted) - len(flagged_idx),
        failed=failed,
        budget=batch.budget if batch else None,
        records=tuple(records),
        recovery=batch,
        timings=timings,
    )
    return clean, report


def guard_inference(query, model: Model, cfg: PipelineConfig):
    """Screen one incoming query; correct it first when the ensemble flags it.

    Accepts an Image or a LabeledSample (the latter lets ground-truth-aware
    detectors participate in tests). Requires the persisted training-time
    budget: a lone query cannot be probed. Returns (image, verdict, label).
    """
    if cfg.budget is None or cfg.budget.epsilon is None:
        raise ConfigurationError(
            "inference-time guard needs the persisted training budget (cfg.budget)"
        )
    if isinstance(query, Image):
        sample = LabeledSample(query, predict(model, query), Provenance.CLEAN)
    else:
        sample = query
    record = evaluate_sample(sample, 0, cfg.ensemble)
    if not record.aggregate.is_poisoned:
        return sample.image, record.aggregate, predict(model, sample.image)
    raw_prediction = predict(model, sample.image)
    result = corrective_pgd(model, sample.image, raw_prediction, cfg.budget, cfg.recovery)
    verdict = Verdict(
        record.aggregate.value,
        f"corrected: raw prediction {raw_prediction}, "
        f"post-correction {result.final_prediction}",
    )
    return result.recovered, verdict, result.final_prediction
