"""Command-line interface for the sizing pipeline.

Subcommands cover the whole workflow: simulate datasets, check measurement
stability, select features, train and evaluate the ratio model, and turn
predictions into memory-size recommendations.

Configuration: every subcommand accepts --config FILE, a JSON object whose
keys are the long flag names with dashes replaced by underscores (for
example {"functions": 500, "noise_cv": 0.0}).  Explicit command-line flags
override config-file values.

Seeding: one --seed drives each run.  It is handed unchanged to the
component the subcommand invokes; components that need several independent
streams split it internally (profile generation spawns one child sequence
per function, cross-validation offsets the seed by the repetition index).
Reruns with the same flags and any --workers value produce byte-identical
output files.

Exit codes: 0 success, 2 usage or validation error (bad flags, missing or
malformed input files), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    MeasurementSummary,
    PricingModel,
    execution_cost,
    read_summaries,
    write_summaries,
)
from rightsizer import model as model_mod
from rightsizer.features import (
    BASE_SOURCE_METRICS,
    build_matrix,
    pair_dataset,
    select_features,
)
from rightsizer.model import (
    FULL_GRID,
    Hyperparameters,
    MlpRegressor,
    ModelFormatError,
    basesize_csv,
    basesize_study,
    evaluate,
    grid_search,
    leaderboard_csv,
    load_model,
    predict,
    save_model,
    train,
)
from rightsizer.optimizer import (
    DEFAULT_TRADEOFF,
    TradeoffParameter,
    benefit,
    optimize_from_monitoring,
    rank_quality,
    score,
)
from rightsizer.simgen import (
    WorkloadSpec,
    generate_dataset,
    generate_profiles,
    ground_truth,
    read_profiles,
    simulate_trace,
    write_profiles,
)
from rightsizer.stability import stability_analysis

#: Features used by train/evaluate when no explicit list is given: the six
#: selected base metrics plus execution time, each as a mean and as a
#: per-second rate.
DEFAULT_FEATURES = tuple(
    sorted(BASE_SOURCE_METRICS)
) + ("execution_time",) + tuple(
    f"{name}_per_second" for name in sorted(BASE_SOURCE_METRICS)
)


class UsageError(Exception):
    """Invalid flags, parameters, or input files; maps to exit code 2."""


class _ProxyTrainer:
    """Picklable factory for the small network used during feature selection."""

    def __init__(self, epochs: int, seed: int):
        self.epochs = epochs
        self.seed = seed

    def __call__(self) -> MlpRegressor:
        return MlpRegressor(hidden_layers=2, neurons_per_layer=32,
                            epochs=self.epochs, optimizer="adam", loss="mse",
                            l2=0.0, learning_rate=5e-3, batch_size=32,
                            seed=self.seed)


def _load_config(path: str) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    try:
        config = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError("config file must contain a JSON object")
    return config


def _read_jsonl(path: str, reader, what: str) -> list:
    try:
        with open(path) as stream:
            return list(reader(stream))
    except OSError as exc:
        raise UsageError(f"cannot read {what} file: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed {what} file {path}: {exc}") from exc


def _load_dataset(path: str) -> list[MeasurementSummary]:
    rows = _read_jsonl(path, read_summaries, "dataset")
    if not rows:
        raise UsageError(f"dataset file {path} is empty")
    return rows


def _load_trained_model(path: str):
    try:
        return load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot read model file: {exc}") from exc
    except ModelFormatError as exc:
        raise UsageError(str(exc)) from exc


def _parse_features(args) -> tuple[str, ...]:
    if getattr(args, "features", None):
        return tuple(name.strip() for name in args.features.split(",") if name.strip())
    if getattr(args, "features_file", None):
        try:
            payload = json.loads(Path(args.features_file).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read features file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"features file is not valid JSON: {exc}") from exc
        if isinstance(payload, dict):
            payload = payload.get("features")
        if not isinstance(payload, list) or not all(isinstance(f, str) for f in payload):
            raise UsageError('features file must hold a list or {"features": [...]}')
        return tuple(payload)
    return DEFAULT_FEATURES


def _hyperparameters(args) -> Hyperparameters:
    try:
        return Hyperparameters(
            optimizer=args.optimizer,
            loss=args.loss,
            epochs=args.epochs,
            neurons_per_layer=args.neurons,
            hidden_layers=args.hidden_layers,
            l2=args.l2,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _pricing(args) -> PricingModel:
    try:
        return PricingModel(
            price_per_gb_second=str(args.price_gb_second),
            price_per_invocation=str(args.price_invocation),
        )
    except (ValueError, ArithmeticError) as exc:
        raise UsageError(f"bad pricing: {exc}") from exc


def _workload(args) -> WorkloadSpec:
    try:
        return WorkloadSpec(request_rate=args.rate, duration=args.minutes * 60.0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _prepare_rows(summaries, base: int, feature_names):
    try:
        inputs, targets = pair_dataset(summaries, base)
        X = build_matrix(feature_names, inputs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return inputs, targets, X


def cmd_generate(args) -> int:
    if args.functions < 1:
        raise UsageError("--functions must be >= 1")
    workload = _workload(args)
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        profiles = generate_profiles(args.functions, master_seed=args.seed,
                                     noise_cv=args.noise_cv)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}") from exc
    summaries = generate_dataset(profiles, workload, workers=args.workers)
    profiles_path = out_dir / "profiles.jsonl"
    dataset_path = out_dir / "dataset.jsonl"
    with open(profiles_path, "w") as stream:
        write_profiles(profiles, stream)
    with open(dataset_path, "w") as stream:
        rows = write_summaries(summaries, stream)
    print(f"wrote {profiles_path} ({len(profiles)} profiles)")
    print(f"wrote {dataset_path} ({rows} rows)")
    print(f"seed={args.seed} rate={workload.request_rate} "
          f"duration_s={workload.duration} noise_cv={args.noise_cv}")
    return 0


def _run_stability(args) -> int:
    if args.memory not in MEMORY_SIZES_MB:
        raise UsageError(f"--memory must be one of {MEMORY_SIZES_MB}")
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    workload = _workload(args)
    if workload.duration < args.full_minutes * 60:
        raise UsageError("--minutes must cover the full analysis window")
    try:
        profiles = generate_profiles(args.functions, master_seed=args.seed,
                                     noise_cv=args.noise_cv)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    traces = (simulate_trace(p, args.memory, workload) for p in profiles)
    report = stability_analysis(traces, full_duration=args.full_minutes,
                                alpha=args.alpha)
    with open(args.out, "w") as stream:
        report.write_csv(stream)
    print(f"wrote {args.out} ({len(report.minutes) * 25} rows)")
    print(f"recommended_minutes={report.recommended_minutes}")
    return 0


def cmd_stability(args) -> int:
    return _run_stability(args)


def cmd_select_features(args) -> int:
    summaries = _load_dataset(args.dataset)
    try:
        inputs, targets = pair_dataset(summaries, args.base)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    # small proxy network: selection retrains it hundreds of times
    trainer = _ProxyTrainer(epochs=args.sfs_epochs, seed=args.seed)
    result = select_features(
        inputs, targets, trainer,
        f1_budget=args.f1_budget, f3_budget=args.f3_budget,
        cv=args.cv, seed=args.seed, workers=args.workers,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stage, trace in (("f1", result.f1_trace), ("f3", result.f3_trace)):
        with open(out_dir / f"selection_{stage}_trace.csv", "w") as stream:
            trace.write_csv(stream)
    final = result.stages["F4"]
    features_path = out_dir / "features.json"
    features_path.write_text(json.dumps(
        {"stage": final.stage, "features": list(final.feature_names)},
        separators=(",", ":")) + "\n")
    for stage in ("F0", "F1", "F2", "F3", "F4"):
        print(f"{stage}: {len(result.stages[stage].feature_names)} features")
    print(f"wrote {features_path}")
    return 0


def cmd_train(args) -> int:
    summaries = _load_dataset(args.dataset)
    feature_names = _parse_features(args)
    hp = _hyperparameters(args)
    inputs, targets, X = _prepare_rows(summaries, args.base, feature_names)
    try:
        model = train(X, targets, hp, feature_names)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_model(model, args.out)
    final_loss = model.estimator.loss_curve_[-1]
    print(f"wrote {args.out}")
    print(f"trained on {X.shape[0]} functions at base {args.base} MB; "
          f"final {hp.loss} loss {final_loss:.6g}")
    return 0


def cmd_evaluate(args) -> int:
    model = _load_trained_model(args.model)
    summaries = _load_dataset(args.dataset)
    _, targets, X = _prepare_rows(summaries, model.base_memory, model.feature_names)
    metrics = evaluate(model, X, targets)
    line = (f"mse={metrics.mse:.6g} mape={metrics.mape:.6g} "
            f"r_squared={metrics.r_squared:.6g} "
            f"explained_variance={metrics.explained_variance:.6g}")
    print(line)
    if args.out:
        with open(args.out, "w") as stream:
            stream.write("mse,mape,r_squared,explained_variance\n")
            stream.write(f"{metrics.mse},{metrics.mape},"
                         f"{metrics.r_squared},{metrics.explained_variance}\n")
        print(f"wrote {args.out}")
    return 0


def cmd_grid_search(args) -> int:
    summaries = _load_dataset(args.dataset)
    feature_names = _parse_features(args)
    if args.grid_file:
        try:
            grid = json.loads(Path(args.grid_file).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read grid file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"grid file is not valid JSON: {exc}") from exc
        if not isinstance(grid, dict):
            raise UsageError("grid file must hold a JSON object of lists")
    else:
        grid = dict(FULL_GRID)
    grid.setdefault("seed", [args.seed])
    _, targets, X = _prepare_rows(summaries, args.base, feature_names)
    try:
        best, board = grid_search(
            X, targets, feature_names, grid,
            folds=args.folds, repetitions=args.repetitions, workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.out, "w") as stream:
        leaderboard_csv(board, stream)
    print(f"wrote {args.out} ({len(board)} combinations)")
    print("best=" + json.dumps(best.as_dict(), separators=(",", ":")))
    return 0


def cmd_basesize_study(args) -> int:
    summaries = _load_dataset(args.dataset)
    feature_names = _parse_features(args)
    hp = _hyperparameters(args)
    try:
        results = basesize_study(
            summaries, hp, feature_names,
            folds=args.folds, repetitions=args.repetitions, workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with open(args.out, "w") as stream:
        basesize_csv(results, stream)
    print(f"wrote {args.out}")
    for base, metrics in results:
        print(f"base={base} mape={metrics.mape:.6g}")
    return 0


def cmd_predict(args) -> int:
    model = _load_trained_model(args.model)
    summaries = _load_dataset(args.summary)
    lines = []
    for summary in summaries:
        if summary.memory != model.base_memory:
            raise UsageError(
                f"summary for {summary.function_id} measured at {summary.memory} MB "
                f"but the model expects {model.base_memory} MB")
        curve = predict(model, summary)
        lines.append(json.dumps(
            {"function_id": summary.function_id, "times_ms": curve.to_dict()},
            separators=(",", ":")))
    out = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(out)
        print(f"wrote {args.out} ({len(lines)} curves)")
    else:
        sys.stdout.write(out)
    return 0


def cmd_optimize(args) -> int:
    model = _load_trained_model(args.model)
    summaries = _load_dataset(args.summary)
    pricing = _pricing(args)
    try:
        tradeoff = TradeoffParameter(args.t)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    truth_curves = {}
    if args.ground_truth:
        for profile in _read_jsonl(args.ground_truth, read_profiles, "profiles"):
            truth_curves[profile.function_id] = ground_truth(profile).curve
    ranks = Counter()
    for summary in summaries:
        if summary.memory != model.base_memory:
            raise UsageError(
                f"summary for {summary.function_id} measured at {summary.memory} MB "
                f"but the model expects {model.base_memory} MB")
        rec = optimize_from_monitoring(summary, model, pricing, tradeoff)
        if len(summaries) == 1 and not args.json:
            rec.write_table(sys.stdout)
        else:
            print(f'{summary.function_id} {rec.to_json()}')
        if summary.function_id in truth_curves:
            truth = truth_curves[summary.function_id]
            rank = rank_quality(rec, truth, pricing, tradeoff)
            ranks[rank] += 1
            cost_delta, speedup = benefit(
                model.base_memory, rec.chosen_memory_mb, truth, pricing)
            print(f"{summary.function_id} rank={rank} "
                  f"cost_delta_pct={cost_delta:.4f} speedup_pct={speedup:.4f}")
        elif truth_curves:
            raise UsageError(
                f"no ground-truth profile for {summary.function_id}")
    if truth_curves and args.ranks_out:
        with open(args.ranks_out, "w") as stream:
            stream.write("rank,count\n")
            for rank in range(1, 7):
                stream.write(f"{rank},{ranks.get(rank, 0)}\n")
        print(f"wrote {args.ranks_out}")
    return 0


def cmd_report(args) -> int:
    if args.kind == "stability":
        return _run_stability(args)
    if args.kind == "curves":
        if not args.profiles:
            raise UsageError("--kind curves needs --profiles")
        profiles = _read_jsonl(args.profiles, read_profiles, "profiles")
        if not profiles:
            raise UsageError("profiles file is empty")
        pricing = _pricing(args)
        with open(args.out, "w") as stream:
            stream.write("function_id,memory_mb,time_ms,cost_usd\n")
            for profile in profiles:
                curve = ground_truth(profile).curve
                for m in MEMORY_SIZES_MB:
                    cost = execution_cost(curve.times_ms[m], m, pricing)
                    stream.write(f"{profile.function_id},{m},"
                                 f"{curve.times_ms[m]!r},{cost}\n")
        print(f"wrote {args.out}")
        return 0
    if args.kind == "accuracy":
        if not args.model or not args.dataset:
            raise UsageError("--kind accuracy needs --model and --dataset")
        model = _load_trained_model(args.model)
        summaries = _load_dataset(args.dataset)
        inputs, targets, X = _prepare_rows(
            summaries, model.base_memory, model.feature_names)
        predicted = model_mod.predict_ratios(model, X)
        with open(args.out, "w") as stream:
            stream.write("function_id,memory_mb,true_ratio,predicted_ratio\n")
            for row, (summary, target) in enumerate(zip(inputs, targets)):
                for col, size in enumerate(target.target_sizes):
                    stream.write(f"{summary.function_id},{size},"
                                 f"{target.ratios[size]!r},{float(predicted[row, col])!r}\n")
        print(f"wrote {args.out}")
        return 0
    raise UsageError(f"unknown report kind {args.kind!r}")


def _add_workload_flags(parser, default_minutes: float):
    parser.add_argument("--rate", type=float, default=30.0,
                        help="request rate per second (default 30)")
    parser.add_argument("--minutes", type=float, default=default_minutes,
                        help=f"measurement duration (default {default_minutes})")


def _add_hp_flags(parser):
    defaults = Hyperparameters()
    parser.add_argument("--optimizer", default=defaults.optimizer,
                        help="sgd, adam, or adagrad")
    parser.add_argument("--loss", default=defaults.loss, help="mse, mae, or mape")
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--neurons", type=int, default=defaults.neurons_per_layer)
    parser.add_argument("--hidden-layers", type=int, default=defaults.hidden_layers)
    parser.add_argument("--l2", type=float, default=defaults.l2)
    parser.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    parser.add_argument("--batch-size", type=int, default=defaults.batch_size)


def _add_feature_flags(parser):
    parser.add_argument("--features", default=None,
                        help="comma-separated feature names")
    parser.add_argument("--features-file", default=None,
                        help="JSON file from select-features")


def _add_pricing_flags(parser):
    parser.add_argument("--price-gb-second", default="0.00001667")
    parser.add_argument("--price-invocation", default="0.0000002")


def _add_stability_flags(parser):
    parser.add_argument("--functions", type=int, default=50)
    _add_workload_flags(parser, default_minutes=15.0)
    parser.add_argument("--noise-cv", type=float, default=0.1)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--memory", type=int, default=256,
                        help="memory size to trace (default 256)")
    parser.add_argument("--full-minutes", type=int, default=15,
                        help="reference window length in minutes")
    parser.add_argument("--out", default="stability.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rightsizer",
        description="Serverless memory-size prediction and optimization toolkit.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def subparser(name, help_text):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None,
                         help="JSON file of default flag values")
        sub.add_argument("--seed", type=int, default=42)
        sub.add_argument("--workers", type=int, default=1)
        return sub

    sub = subparser("generate", "simulate functions and write a dataset")
    sub.add_argument("--functions", type=int, default=200)
    _add_workload_flags(sub, default_minutes=10.0)
    sub.add_argument("--noise-cv", type=float, default=0.1)
    sub.add_argument("--out-dir", default=".")
    sub.set_defaults(func=cmd_generate)

    sub = subparser("stability", "measurement-window stability analysis")
    _add_stability_flags(sub)
    sub.set_defaults(func=cmd_stability)

    sub = subparser("select-features", "run the five-stage feature pipeline")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--base", type=int, default=256)
    sub.add_argument("--f1-budget", type=int, default=13)
    sub.add_argument("--f3-budget", type=int, default=11)
    sub.add_argument("--cv", type=int, default=3)
    sub.add_argument("--sfs-epochs", type=int, default=60)
    sub.add_argument("--out-dir", default=".")
    sub.set_defaults(func=cmd_select_features)

    sub = subparser("train", "fit the execution-time-ratio model")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--base", type=int, default=256)
    _add_feature_flags(sub)
    _add_hp_flags(sub)
    sub.add_argument("--out", default="model.json")
    sub.set_defaults(func=cmd_train)

    sub = subparser("evaluate", "pooled metrics of a model on a dataset")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--model", required=True)
    sub.add_argument("--out", default=None)
    sub.set_defaults(func=cmd_evaluate)

    sub = subparser("grid-search", "exhaustive hyperparameter search")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--base", type=int, default=256)
    _add_feature_flags(sub)
    sub.add_argument("--grid-file", default=None,
                     help="JSON object of lists; omitted = full 1296-point grid")
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--repetitions", type=int, default=10)
    sub.add_argument("--out", default="leaderboard.csv")
    sub.set_defaults(func=cmd_grid_search)

    sub = subparser("basesize-study", "model quality per monitored size")
    sub.add_argument("--dataset", required=True)
    _add_feature_flags(sub)
    _add_hp_flags(sub)
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--repetitions", type=int, default=10)
    sub.add_argument("--out", default="basesize.csv")
    sub.set_defaults(func=cmd_basesize_study)

    sub = subparser("predict", "predict execution-time curves")
    sub.add_argument("--model", required=True)
    sub.add_argument("--summary", required=True,
                     help="JSONL of measurement summaries at the base size")
    sub.add_argument("--out", default=None)
    sub.set_defaults(func=cmd_predict)

    sub = subparser("optimize", "recommend a memory size per function")
    sub.add_argument("--model", required=True)
    sub.add_argument("--summary", required=True)
    sub.add_argument("--t", type=float, default=DEFAULT_TRADEOFF)
    _add_pricing_flags(sub)
    sub.add_argument("--ground-truth", default=None,
                     help="profiles.jsonl for rank/benefit columns")
    sub.add_argument("--ranks-out", default=None,
                     help="write a rank histogram CSV (needs --ground-truth)")
    sub.add_argument("--json", action="store_true",
                     help="always emit JSON lines instead of the table")
    sub.set_defaults(func=cmd_optimize)

    sub = subparser("report", "emit plot-ready CSV series")
    sub.add_argument("--kind", required=True,
                     choices=("curves", "stability", "accuracy"))
    sub.add_argument("--profiles", default=None, help="for --kind curves")
    sub.add_argument("--model", default=None, help="for --kind accuracy")
    sub.add_argument("--dataset", default=None, help="for --kind accuracy")
    _add_pricing_flags(sub)
    _add_stability_flags(sub)
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.config:
            config = _load_config(args.config)
            known = set(vars(args))
            unknown = set(config) - known
            if unknown:
                raise UsageError(
                    f"unknown config keys for {args.command}: {sorted(unknown)}")
            # apply config values only where the command line kept the default
            provided = _explicit_flags(argv)
            for key, value in config.items():
                if key not in provided:
                    setattr(args, key, value)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # runtime failure: data or computation broke
        print(f"error: {exc}", file=sys.stderr)
        return 3


def _explicit_flags(argv) -> set[str]:
    tokens = argv if argv is not None else sys.argv[1:]
    names = set()
    for token in tokens:
        if token.startswith("--"):
            names.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return names


if __name__ == "__main__":
    sys.exit(main())
