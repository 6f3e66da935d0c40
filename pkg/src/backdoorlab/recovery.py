"""Budget-calibrated corrective recovery of flagged images.

Three stages. First a probe pass runs signed-gradient descent on each flagged
image with the loosest possible budget (the full value range, radius 1.0) and
records how far each image actually moved in sup norm; the largest movement is
the estimated worst-case trigger magnitude. Second, the corrective budget is
that magnitude inflated by a small safety margin, with the step size set so
the budget is spent evenly over the step count. Third, the same descent walks
each flagged image toward its stored label inside the tight budget ball,
clipping every iterate to the ball and then to [0, 1].

sign(0) is 0, so zero-gradient coordinates are fixed points. The safety
margin, step count, and clipping order are part of the contract; tests pin
them.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as bio
from .classifier import Model, NonFiniteGradient, logits_batch, loss_and_input_gradient
from .images import Image, LabeledSample, clip_to_ball_and_range, l2_distance, linf_distance

BUDGET_MODES = ("global_max", "percentile", "per_image_capped")

PROBE_RADIUS = 1.0  # the probe pass is bounded only by the value range


@dataclass(frozen=True)
class RecoveryConfig:
    steps: int = 200
    safety_margin: float = 0.05
    budget_mode: str = "global_max"
    percentile: float = 95.0
    early_stop: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")
        if self.budget_mode not in BUDGET_MODES:
            raise ValueError(f"budget_mode must be one of {BUDGET_MODES}")
        if not 0.0 < self.percentile <= 100.0:
            raise ValueError("percentile must be in (0, 100]")


@dataclass(frozen=True)
class BudgetResult:
    """Probe outcome and derived budget. epsilon/alpha are None until computed."""

    delta_max: float
    epsilon: float | None = None
    alpha: float | None = None
    per_image_deltas: tuple = ()

    def __post_init__(self):
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def to_dict(self, mode: str | None = None) -> dict:
        doc = {
            "delta_max": self.delta_max,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "per_image_deltas": list(self.per_image_deltas),
        }
        if mode is not None:
            doc["mode"] = mode
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "BudgetResult":
        return cls(
            doc["delta_max"],
            doc.get("epsilon"),
            doc.get("alpha"),
            tuple(doc.get("per_image_deltas", ())),
        )


@dataclass(frozen=True)
class RecoveryResult:
    recovered: Image
    rho_inf: float
    rho_2: float
    iterations_run: int
    final_prediction: int
    success: bool


@dataclass(frozen=True)
class RecoveryBatch:
    """Per-image outcomes of recover_set; results[i] is None iff errors[i] is set."""

    budget: BudgetResult
    mode: str
    results: tuple
    errors: tuple

    @property
    def recovered_count(self) -> int:
        return sum(1 for r in self.results if r is not None)

    @property
    def success_count(self) -> int:
        return sum(1 for r in self.results if r is not None and r.success)


def _signed_descent(model: Model, start: np.ndarray, center: np.ndarray, y: int,
                    eps: float, alpha: float, steps: int,
                    stop_on_correct: bool = False, on_step=None):
    """Shared inner loop: x <- clip(x - alpha*sign(grad), ball(center, eps)) inter [0,1].

    Returns (final float32 array, iterations actually run).
    """
    x = start.astype(np.float32).copy()
    alpha32 = np.float32(alpha)
    ran = 0
    for t in range(steps):
        if stop_on_correct:
            # classify the current iterate; stop as soon as it lands on y
            if int(np.argmax(logits_batch(model, x.reshape(1, -1).astype(np.float64)))) == y:
                break
        celoss, grad = loss_and_input_gradient(model, x, y)
        if not (np.isfinite(celoss) and np.all(np.isfinite(grad))):
            raise NonFiniteGradient(f"non-finite gradient at iteration {t}")
        x = clip_to_ball_and_range(x - alpha32 * np.sign(grad).astype(np.float32), center, eps)
        ran = t + 1
        if __debug__:
            assert float(np.max(np.abs(x.astype(np.float64) - center.astype(np.float64)))) <= eps + 1e-6
            assert x.min() >= 0.0 and x.max() <= 1.0
        if on_step is not None:
            on_step(ran, x)
    return x, ran


def _probe_single_delta(model: Model, sample: LabeledSample, steps: int) -> float:
    """Full-range descent pass for one image; returns its sup-norm displacement."""
    center = sample.image.data
    final, _ = _signed_descent(
        model, center, center, sample.label, PROBE_RADIUS, PROBE_RADIUS / steps, steps
    )
    return float(np.max(np.abs(final.astype(np.float64) - center.astype(np.float64))))


def probe_trigger_magnitude(model: Model, flagged, steps: int, threads: int = 1) -> BudgetResult:
    """Estimate the worst-case trigger magnitude over the flagged images.

    Each image gets a full-range descent pass (radius 1.0, step 1/steps)
    toward its stored label; the sup-norm displacement after the final step is
    that image's delta. delta_max is the largest delta.
    """
    flagged = list(flagged)
    if not flagged:
        raise ValueError("cannot probe an empty flagged set")

    def one(sample: LabeledSample) -> float:
        return _probe_single_delta(model, sample, steps)

    if threads <= 1:
        deltas = [one(s) for s in flagged]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            deltas = list(pool.map(one, flagged))
    return BudgetResult(delta_max=max(deltas), per_image_deltas=tuple(deltas))


def compute_budget(delta_max: float, safety_margin: float, steps: int,
                   per_image_deltas=()) -> BudgetResult:
    """Inflate the probed magnitude by the safety margin and spread it over steps."""
    if delta_max < 0 or safety_margin < 0:
        raise ValueError("delta_max and safety_margin must be >= 0")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    eps = (1.0 + safety_margin) * delta_max
    return BudgetResult(delta_max, eps, eps / steps, tuple(per_image_deltas))


def nearest_rank_percentile(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("empty value list")
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def corrective_pgd(model: Model, x_p: Image, y_p: int, budget: BudgetResult,
                   cfg: RecoveryConfig, on_step=None) -> RecoveryResult:
    """Run the bounded corrective descent on one image and account for the noise."""
    if budget.epsilon is None or budget.alpha is None:
        raise ValueError("budget has no epsilon/alpha; call compute_budget first")
    if x_p.shape != tuple(model.input_dims):
        raise ValueError(f"image shape {x_p.shape} != model dims {tuple(model.input_dims)}")
    final, ran = _signed_descent(
        model,
        x_p.data,
        x_p.data,
        y_p,
        budget.epsilon,
        budget.alpha,
        cfg.steps,
        stop_on_correct=cfg.early_stop,
        on_step=on_step,
    )
    recovered = Image(final)
    rho_inf = linf_distance(recovered, x_p)
    rho_2 = l2_distance(recovered, x_p)
    if __debug__:
        assert rho_inf <= budget.epsilon + 1e-6
    pred = int(np.argmax(logits_batch(model, final.reshape(1, -1).astype(np.float64))[0]))
    return RecoveryResult(recovered, rho_inf, rho_2, ran, pred, pred == y_p)


def recover_set(model: Model, flagged, cfg: RecoveryConfig, threads: int = 1) -> RecoveryBatch:
    """Probe, derive the budget per the configured mode, then recover each image.

    Per-image failures (probe or recovery) are recorded and do not abort the
    batch; failed probes are left out of the budget. Raises on an empty
    flagged set: a budget probed from nothing would be meaningless.
    """
    flagged = list(flagged)
    if not flagged:
        raise ValueError("recover_set needs a non-empty flagged set")

    def probe_one(sample):
        try:
            return _probe_single_delta(model, sample, cfg.steps), None
        except NonFiniteGradient as exc:
            return None, f"probe: {exc}"

    if threads <= 1:
        probed = [probe_one(s) for s in flagged]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probed = list(pool.map(probe_one, flagged))
    deltas = tuple(d for d, _ in probed)
    valid = [d for d in deltas if d is not None]
    if not valid:
        raise NonFiniteGradient("probe failed for every flagged image")

    margin = cfg.safety_margin
    delta_max = max(valid)
    if cfg.budget_mode == "percentile":
        ref = nearest_rank_percentile(valid, cfg.percentile)
        budget = BudgetResult(
            delta_max, (1.0 + margin) * ref, (1.0 + margin) * ref / cfg.steps, deltas
        )
        per_image_eps = [budget.epsilon] * len(flagged)
    elif cfg.budget_mode == "per_image_capped":
        budget = compute_budget(delta_max, margin, cfg.steps, deltas)
        cap = budget.epsilon
        per_image_eps = [
            None if d is None else min((1.0 + margin) * d, cap) for d in deltas
        ]
    else:
        budget = compute_budget(delta_max, margin, cfg.steps, deltas)
        per_image_eps = [budget.epsilon] * len(flagged)

    def recover_one(entry):
        sample, eps, probe_error = entry
        if probe_error is not None:
            return None, probe_error
        per_budget = BudgetResult(budget.delta_max, eps, eps / cfg.steps)
        try:
            return corrective_pgd(model, sample.image, sample.label, per_budget, cfg), None
        except NonFiniteGradient as exc:
            return None, str(exc)

    entries = [(s, e, err) for s, e, (_, err) in zip(flagged, per_image_eps, probed)]
    if threads <= 1:
        outcomes = [recover_one(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(recover_one, entries))
    results = tuple(r for r, _ in outcomes)
    errors = tuple(e for _, e in outcomes)
    return RecoveryBatch(budget, cfg.budget_mode, results, errors)


def batch_report(batch: RecoveryBatch) -> dict:
    per_image = []
    for i, (res, err) in enumerate(zip(batch.results, batch.errors)):
        if res is None:
            per_image.append({"index": i, "error": err})
        else:
            per_image.append(
                {
                    "index": i,
                    "rho_inf": res.rho_inf,
                    "rho_2": res.rho_2,
                    "iterations": res.iterations_run,
                    "success": res.success,
                }
            )
    return {"budget": batch.budget.to_dict(mode=batch.mode), "per_image": per_image}


def write_recovery_artifacts(batch: RecoveryBatch, flagged, out_dir) -> None:
    """Recovered tensor+PNG pairs, per-image perturbation heatmaps, report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (sample, res) in enumerate(zip(flagged, batch.results)):
        if res is None:
            continue
        stem = f"recovered_{i:04d}"
        bio.write_image(res.recovered, out_dir / f"{stem}.bft")
        bio.write_png(res.recovered, out_dir / f"{stem}.png")
        bio.write_heatmap_png(sample.image, res.recovered, out_dir / f"{stem}_heatmap.png")
    (out_dir / "report.json").write_text(json.dumps(batch_report(batch), indent=2))
