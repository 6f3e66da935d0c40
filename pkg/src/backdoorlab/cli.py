"""Command-line front end wiring the library into reproducible experiments.

Subcommands: gen, poison, train, detect, recover, sanitize, evaluate. A single
TOML config file can pre-set any flag (section per subcommand, flags win).
Every run writes a manifest with the resolved configuration, per-stage seeds,
input hashes, tool version, and wall-clock timings, so a run can be replayed
bit-for-bit from its manifest (timings aside).

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import io as bio
from .bench import make_patch_benchmark
from .classifier import TrainConfig, load_model, save_model, train
from .detection import (
    EnsembleConfig,
    OracleDetector,
    DetectorProfile,
    ResidualDetector,
    SimulatedDetector,
    detect_all,
    flagged_indices,
    records_to_jsonl,
    records_from_jsonl,
)
from .images import class_means, gen_synthetic_identities
from .metrics import (
    REFERENCE_COUNTS,
    metric_table,
    row_percentages,
    table_to_csv,
    table_to_json,
)
from .pipeline import PipelineConfig, sanitize
from .poisoning import (
    HiddenTriggerConfig,
    MakeupSpec,
    PatchTrigger,
    checker_pattern,
    poison_with_hidden_trigger,
    poison_with_makeup,
    poison_with_patch,
    save_plan,
)
from .recovery import RecoveryConfig, recover_set, write_recovery_artifacts
from .remote import RemoteDetector, RemoteDetectorConfig

STAGES = ("gen", "poison", "train", "detect", "recover", "sanitize", "evaluate")


class CliError(Exception):
    """Validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def stage_seed(root_seed: int, stage: str) -> int:
    """Split one root seed into a per-stage stream."""
    ss = np.random.SeedSequence([int(root_seed), STAGES.index(stage)])
    return int(ss.generate_state(1)[0])


def hash_path(path) -> str:
    """sha256 of a file, or of a directory's sorted file names and contents."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def parse_dims(text: str) -> tuple:
    try:
        h, w, c = (int(v) for v in text.lower().split("x"))
        return h, w, c
    except Exception:
        raise CliError(f"bad --dims {text!r}, expected HxWxC like 12x12x3")


def parse_detectors(spec: str, data=None, args=None, seed: int = 0):
    """Comma list: oracle | residual | simulated:<fpr>,<fnr> | remote:<url>."""
    tokens = spec.split(",")
    detectors = []
    i = 0
    sim_count = 0
    while i < len(tokens):
        tok = tokens[i].strip()
        if tok == "oracle":
            detectors.append(OracleDetector())
        elif tok == "residual":
            if data is None:
                raise CliError("residual detector needs an input dataset")
            threshold = args.residual_threshold if args else 0.25
            detectors.append(ResidualDetector(class_means(data), threshold))
        elif tok.startswith("simulated:"):
            try:
                fpr = float(tok.split(":", 1)[1])
                fnr = float(tokens[i + 1])
            except (ValueError, IndexError):
                raise CliError(f"bad detector spec near {tok!r}; want simulated:<fpr>,<fnr>")
            i += 1
            detectors.append(
                SimulatedDetector(DetectorProfile(fpr, fnr, seed=seed + sim_count))
            )
            sim_count += 1
        elif tok.startswith("remote:"):
            url = tok.split(":", 1)[1]
            detectors.append(RemoteDetector(RemoteDetectorConfig(url)))
        elif tok:
            raise CliError(f"unknown detector {tok!r}")
        i += 1
    if not detectors:
        raise CliError("no detectors given")
    return tuple(detectors)


def write_manifest(out_dir, command, args, seeds, input_paths, timings, outputs):
    doc = {
        "tool_version": __version__,
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k not in ("func", "config")},
        "root_seed": args.seed,
        "stage_seeds": seeds,
        "input_hashes": {str(p): hash_path(p) for p in input_paths if Path(p).exists()},
        "timings": timings,
        "outputs": [str(o) for o in outputs],
    }
    out_dir = Path(out_dir)
    if out_dir.suffix:  # file output: manifest sits next to it
        manifest_path = out_dir.with_name(out_dir.name + ".manifest.json")
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = out_dir / "run_manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2))
    return manifest_path


# --- subcommands ----------------------------------------------------------


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    seed = stage_seed(args.seed, "gen")
    data = gen_synthetic_identities(
        args.classes, args.per_class, parse_dims(args.dims), args.sigma, seed
    )
    bio.save_dataset(data, args.out)
    timings = {"total_s": time.perf_counter() - t0}
    write_manifest(args.out, "gen", args, {"gen": seed}, [], timings, [args.out])
    print(f"wrote {len(data)} samples ({args.classes} classes) to {args.out}")
    return 0


def cmd_poison(args) -> int:
    t0 = time.perf_counter()
    data = bio.load_dataset(args.inp)
    dims = data.image_shape
    pattern = checker_pattern(args.patch_side, args.patch_side, dims[2], amplitude=args.amplitude)
    trig = PatchTrigger(pattern, (args.row, args.col), opacity=args.opacity)
    if args.method == "patch":
        poisoned, plan = poison_with_patch(
            data, args.source_class, args.target_class, args.rate, trig
        )
        mask = None
    elif args.method == "makeup":
        mask_arr = np.zeros(dims, dtype=np.float32)
        mask_arr[args.row : args.row + args.patch_side, args.col : args.col + args.patch_side, :] = 1.0
        full_pattern = checker_pattern(dims[0], dims[1], dims[2], amplitude=args.amplitude)
        from .images import Image

        spec = MakeupSpec(Image(mask_arr), full_pattern)
        poisoned, plan = poison_with_makeup(
            data, args.source_class, args.target_class, args.rate, spec
        )
        pattern, mask = full_pattern, spec.mask
    else:  # hidden
        if not args.model:
            raise CliError("--method hidden needs --model")
        model = load_model(args.model)
        cfg = HiddenTriggerConfig(args.pixel_budget, args.steps, args.step_size)
        poisoned, plan = poison_with_hidden_trigger(
            data, model, args.source_class, args.target_class, args.rate, trig, cfg
        )
        mask = None
    bio.save_dataset(poisoned, args.out)
    save_plan(plan, Path(args.out) / "poison_plan", pattern=pattern, mask=mask)
    timings = {"total_s": time.perf_counter() - t0}
    inputs = [args.inp] + ([args.model] if args.model else [])
    write_manifest(args.out, "poison", args, {}, inputs, timings, [args.out])
    print(f"poisoned {len(plan.entries)} samples ({args.method}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    data = bio.load_dataset(args.inp)
    seed = stage_seed(args.seed, "train")
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=seed,
        l2_penalty=args.l2,
        architecture=args.arch,
        hidden=args.hidden,
    )
    result = train(data, cfg)
    save_model(result.model, args.out)
    timings = {"total_s": time.perf_counter() - t0}
    write_manifest(Path(args.out), "train", args, {"train": seed}, [args.inp], timings, [args.out])
    print(f"trained {args.arch} to train accuracy {result.train_accuracy:.4f} -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    t0 = time.perf_counter()
    data = bio.load_dataset(args.inp)
    seed = stage_seed(args.seed, "detect")
    detectors = parse_detectors(args.detectors, data=data, args=args, seed=seed)
    cfg = EnsembleConfig(detectors, threshold=args.threshold)
    records = detect_all(data, cfg, threads=args.threads)
    Path(args.out).write_text(records_to_jsonl(records))
    flagged = flagged_indices(records)
    timings = {"total_s": time.perf_counter() - t0}
    write_manifest(Path(args.out), "detect", args, {"detect": seed}, [args.inp], timings, [args.out])
    print(f"flagged {len(flagged)}/{len(data)} samples -> {args.out}")
    return 0


def cmd_recover(args) -> int:
    t0 = time.perf_counter()
    data = bio.load_dataset(args.inp)
    model = load_model(args.model)
    if args.records:
        records = records_from_jsonl(Path(args.records).read_text())
        flagged = [data[i] for i in flagged_indices(records)]
        if not flagged:
            raise CliError("records mark nothing as poisoned; nothing to recover")
    else:
        flagged = list(data)
    cfg = RecoveryConfig(
        steps=args.steps,
        safety_margin=args.delta,
        budget_mode=args.budget_mode,
        percentile=args.p,
        early_stop=args.early_stop,
    )
    batch = recover_set(model, flagged, cfg, threads=args.threads)
    write_recovery_artifacts(batch, flagged, args.out)
    timings = {"total_s": time.perf_counter() - t0}
    inputs = [args.inp, args.model] + ([args.records] if args.records else [])
    write_manifest(args.out, "recover", args, {}, inputs, timings, [args.out])
    print(
        f"recovered {batch.success_count}/{len(flagged)} "
        f"(mode {args.budget_mode}, eps {batch.budget.epsilon:.4f}) -> {args.out}"
    )
    return 0


def cmd_sanitize(args) -> int:
    t0 = time.perf_counter()
    data = bio.load_dataset(args.inp)
    seed = stage_seed(args.seed, "detect")
    detectors = parse_detectors(args.detectors, data=data, args=args, seed=seed)
    train_seed = stage_seed(args.seed, "train")
    cfg = PipelineConfig(
        ensemble=EnsembleConfig(detectors, threshold=args.threshold),
        recovery=RecoveryConfig(
            steps=args.steps,
            safety_margin=args.delta,
            budget_mode=args.budget_mode,
            percentile=args.p,
            early_stop=args.early_stop,
        ),
        trainer=TrainConfig(
            epochs=args.epochs, architecture=args.arch, hidden=args.hidden, seed=train_seed
        ),
    )
    model = load_model(args.model) if args.model else None
    cleaned, report = sanitize(data, model, cfg, threads=args.threads)
    bio.save_dataset(cleaned, args.out)
    report_path = Path(args.out) / "sanitization_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2))
    timings = dict(report.timings)
    timings["total_s"] = time.perf_counter() - t0
    inputs = [args.inp] + ([args.model] if args.model else [])
    seeds = {"detect": seed, "train": train_seed}
    write_manifest(args.out, "sanitize", args, seeds, inputs, timings, [args.out, report_path])
    print(
        f"sanitized: {report.recovered} recovered, {report.failed} failed, "
        f"{report.passed} passed through -> {args.out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    if args.fixtures:
        if args.fixtures == "table357":
            chunks = []
            for dataset, counts in REFERENCE_COUNTS.items():
                rows = metric_table(counts)
                for r in rows:
                    r["dataset"] = dataset
                chunks.extend(rows)
        elif args.fixtures == "table246":
            chunks = []
            for dataset, counts in REFERENCE_COUNTS.items():
                for name, c in counts.items():
                    row = {"dataset": dataset, "name": name}
                    row.update(row_percentages(c))
                    chunks.append(row)
        else:
            raise CliError(f"unknown fixture set {args.fixtures!r}")
        text = table_to_csv(chunks) if args.format == "csv" else table_to_json(chunks)
        print(text)
        if args.out:
            Path(args.out).write_text(text)
        return 0
    if args.records:
        from .metrics import confusion, metrics

        records = records_from_jsonl(Path(args.records).read_text())
        c = confusion(records)
        m = metrics(c).as_percentages()
        doc = {"counts": {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn}, "metrics": m}
        text = json.dumps(doc, indent=2)
        print(text)
        if args.out:
            Path(args.out).write_text(text)
        return 0
    raise CliError("evaluate needs --fixtures or --records")


def cmd_bench(args) -> int:
    # convenience: materialize the synthetic benchmark for demos and scripts
    t0 = time.perf_counter()
    seed = stage_seed(args.seed, "gen")
    bench = make_patch_benchmark(seed=seed, dims=parse_dims(args.dims))
    out = Path(args.out)
    bio.save_dataset(bench.train_untrusted, out / "untrusted")
    bio.save_dataset(bench.train_clean, out / "clean_baseline")
    bio.save_dataset(bench.clean_test, out / "clean_test")
    from .images import Dataset

    bio.save_dataset(
        Dataset(bench.probes, bench.train_clean.num_classes, "probes"), out / "probes"
    )
    timings = {"total_s": time.perf_counter() - t0}
    write_manifest(out, "bench", args, {"gen": seed}, [], timings, [out])
    print(f"benchmark written to {out} (target class {bench.target_class})")
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="backdoorlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"backdoorlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML config file; explicit flags win")
        p.add_argument("--seed", type=int, default=0, help="root seed, split per stage")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("gen", help="generate a synthetic identity dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=100, dest="per_class")
    p.add_argument("--dims", default="12x12x3")
    p.add_argument("--sigma", type=float, default=0.05)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("poison", help="inject triggers into a dataset")
    add_common(p)
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("patch", "makeup", "hidden"), default="patch")
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--source-class", type=int, default=1, dest="source_class")
    p.add_argument("--target-class", type=int, default=0, dest="target_class")
    p.add_argument("--patch-side", type=int, default=4, dest="patch_side")
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--opacity", type=float, default=1.0)
    p.add_argument("--row", type=int, default=1)
    p.add_argument("--col", type=int, default=1)
    p.add_argument("--model", help="crafting model for --method hidden")
    p.add_argument("--pixel-budget", type=float, default=16 / 255, dest="pixel_budget")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--step-size", type=float, default=0.01, dest="step_size")
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("train", help="train a classifier")
    add_common(p)
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=("linear", "mlp1"), default="mlp1")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--l2", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run the detector ensemble over a dataset")
    add_common(p)
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--out", required=True, help="records JSONL path")
    p.add_argument("--detectors", default="oracle")
    p.add_argument("--threshold", type=int, default=None, help="votes needed to flag")
    p.add_argument("--residual-threshold", type=float, default=0.25, dest="residual_threshold")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("recover", help="probe the budget and correct flagged images")
    add_common(p)
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--out", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--records", help="detect output; only flagged samples are recovered")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.05, help="safety margin")
    p.add_argument(
        "--budget-mode",
        choices=("global_max", "percentile", "per_image_capped"),
        default="global_max",
        dest="budget_mode",
    )
    p.add_argument("--p", type=float, default=95.0, help="percentile for --budget-mode percentile")
    p.add_argument("--early-stop", action="store_true", dest="early_stop")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("sanitize", help="detect, recover, and rebuild a clean dataset")
    add_common(p)
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="trusted clean-only classifier; trained on the vote-clean subset if omitted")
    p.add_argument("--detectors", default="oracle")
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--residual-threshold", type=float, default=0.25, dest="residual_threshold")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument(
        "--budget-mode",
        choices=("global_max", "percentile", "per_image_capped"),
        default="global_max",
        dest="budget_mode",
    )
    p.add_argument("--p", type=float, default=95.0)
    p.add_argument("--early-stop", action="store_true", dest="early_stop")
    p.add_argument("--arch", choices=("linear", "mlp1"), default="mlp1")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=40)
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("evaluate", help="metric tables from fixtures or detect records")
    add_common(p)
    p.add_argument("--fixtures", choices=("table357", "table246"))
    p.add_argument("--records", help="detect output JSONL with ground truth")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="materialize the synthetic patched benchmark")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="12x12x3")
    p.set_defaults(func=cmd_bench)

    return parser


def apply_config_file(parser, argv):
    """Seed subcommand defaults from the TOML config, so explicit flags win."""
    probe = _Parser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    path = Path(known.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    doc = tomllib.loads(path.read_text())
    command = next((a for a in argv if a and not a.startswith("-")), None)
    merged = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    if command and isinstance(doc.get(command), dict):
        merged.update(doc[command])
    for sub_action in parser._subparsers._group_actions:
        for name, sub in sub_action.choices.items():
            if name == command:
                valid = {a.dest for a in sub._actions}
                unknown = set(merged) - valid
                if unknown:
                    raise CliError(f"config keys not recognized for {command}: {sorted(unknown)}")
                sub.set_defaults(**merged)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
