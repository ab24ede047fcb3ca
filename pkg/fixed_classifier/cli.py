"""
Command Line Module

Experiment runner:

    python -m fixed_classifier run          --config exp.json [--out DIR] [--seed N]
    python -m fixed_classifier compare      --config exp.json
    python -m fixed_classifier sweep        --config exp.json [--jobs N]
    python -m fixed_classifier corrupt-eval --config exp.json
    python -m fixed_classifier export-idx   --config exp.json
    python -m fixed_classifier template     [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 I/O error (missing, truncated or malformed files).
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .corruptions import apply_corruption
from .data import Dataset
from .exceptions import (ConfigError, ConsistencyError, DivergenceError, FixedHeadError, FormatError,
                         IntegrityError)
from .input_reader import ExperimentConfig, InputReader, create_template_config
from .trainer import RunResult, TrainConfig, evaluate, mean_summary, sweep, train
from .utils import (ExperimentReport, emit_heatmap, print_comparison, print_run_summary, print_sweep,
                    save_matrix_to_csv, save_metrics_to_csv, save_pairs_to_csv, save_projection_to_csv,
                    save_table_to_csv)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

DEFAULT_VARIANTS = [{'label': 'fixed', 'fixed': True}, {'label': 'non-fixed', 'fixed': False}]
DEFAULT_CORRUPTIONS = [
    {'kind': 'salt_pepper', 'severities': [0, 0.1, 0.3]},
    {'kind': 'blur', 'severities': [0, 1, 2]},
    {'kind': 'compression', 'severities': [0, 0.05, 0.2]},
]
LOWER_IS_BETTER = ('spearman_rho',)
COMPARED = ('accuracy', 'compactness', 'separability', 'spearman_rho')


def build_train_config(config: ExperimentConfig,
                       train_data: Dataset,
                       seed: int,
                       head_overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """TrainConfig for one run; seeds derive from ``seed``."""
    t = config.training
    return TrainConfig(
        learning_rate=float(t['learning_rate']),
        epochs=int(t['epochs']),
        batch_size=int(t['batch_size']),
        encoder=config.encoder_spec(train_data.example_shape, seed),
        head=config.head_config(train_data.num_classes, seed, head_overrides),
        momentum=float(t.get('momentum', 0.9)),
        lr_decay=t.get('lr_decay', []),
        seed=seed + 3,
        flip_augment=bool(t.get('flip_augment', False)),
    )


def write_json(payload: Dict[str, Any], path: Path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ========== Subcommands ==========

def cmd_run(config: ExperimentConfig, out: Path, jobs: int) -> int:
    train_data, test_data = config.load_datasets()
    model, result = train(build_train_config(config, train_data, config.seed), train_data, test_data)
    report = result.test_report

    write_json({'experiment': config.to_dict(), 'run': result.to_dict()}, out / "results.json")
    save_metrics_to_csv(report, out / "metrics.csv")
    save_matrix_to_csv(report.class_cosine, out / "class_cosine.csv")
    emit_heatmap(report.class_cosine, out / "class_cosine.pgm")
    save_matrix_to_csv(report.confusion.counts, out / "confusion.csv")
    save_pairs_to_csv(report.pairs, out / "pairs.csv")
    save_projection_to_csv(report.projection, test_data.labels, out / "projection.csv")
    save_checkpoint(model, out / "model.fxh")

    text = ExperimentReport("run")
    text.add_results("Configuration", {'seed': config.seed, **result.config.to_dict()['head']})
    text.add_results("Test metrics", report.summary())
    if result.history:
        last = result.history[-1]
        text.add_results("Final epoch", {'epoch': last.epoch, 'train_loss': last.train_loss,
                                         'train_accuracy': last.train_accuracy})
    text.add_results("Head digest unchanged", model.head.verify_digest())
    text.save_report(out / "summary.txt")

    print_run_summary(report.summary(), "run")
    return EXIT_OK


def _comparison_rows(labels: List[str],
                     variants: List[Dict[str, Any]],
                     summaries: List[Dict[str, Optional[float]]]) -> List[Dict[str, Any]]:
    rows = []
    for label, variant, summary in zip(labels, variants, summaries):
        row = {'variant': label}
        row.update({key: variant.get(key) for key in ('mode', 'fixed', 'scale_s')})
        row.update({key: summary[key] for key in COMPARED})
        rows.append(row)

    for key in COMPARED:
        a, b = rows[0][key], rows[1][key]
        winner = None
        if a is not None and b is not None and a != b:
            better_first = a < b if key in LOWER_IS_BETTER else a > b
            winner = 0 if better_first else 1
        for position, row in enumerate(rows):
            row[f'{key}_winner'] = winner == position
    return rows


def cmd_compare(config: ExperimentConfig, out: Path, jobs: int) -> int:
    variants = config.compare_variants or DEFAULT_VARIANTS
    labels = [v.get('label', f"variant{i}") for i, v in enumerate(variants)]
    resolved = []
    summaries = []
    runs: Dict[str, List[Dict[str, Any]]] = {label: [] for label in labels}

    for label, variant in zip(labels, variants):
        reports = []
        for repeat in range(config.repeats):
            seed = config.seed + repeat
            train_data, test_data = config.load_datasets(seed)
            train_config = build_train_config(config, train_data, seed, variant)
            _, result = train(train_config, train_data, test_data)
            reports.append(result.test_report)
            runs[label].append(result.to_dict())
        head = train_config.head
        resolved.append({'mode': head.mode.name, 'fixed': head.fixed, 'scale_s': head.scale_s})
        summaries.append(mean_summary(reports))
        logger.info("variant %s: mean test accuracy %.4f over %d run(s)",
                    label, summaries[-1]['accuracy'], config.repeats)

    rows = _comparison_rows(labels, resolved, summaries)
    save_table_to_csv(rows, out / "compare.csv")
    write_json({'experiment': config.to_dict(), 'comparison': rows, 'runs': runs}, out / "results.json")
    print_comparison(rows)
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig, out: Path, jobs: int) -> int:
    if config.sweep is None:
        raise ConfigError("The sweep command needs a 'sweep' section", key="sweep")
    train_data, test_data = config.load_datasets()
    template = build_train_config(config, train_data, config.seed)
    table = sweep(template, config.sweep['axis'], config.sweep['values'], train_data, test_data, jobs=jobs)

    rows = table.to_rows()
    save_table_to_csv(rows, out / "sweep.csv")
    write_json({
        'experiment': config.to_dict(),
        'axis': table.axis,
        'best_value': table.best_value,
        'runs': [{'value': value, 'result': result.to_dict()} for value, result in table.rows.items()],
    }, out / "results.json")
    print_sweep(table.axis, rows, table.best_value)
    return EXIT_OK


def corruption_ladder(model, test_data: Dataset, corruptions: Sequence[Dict[str, Any]],
                      seed: int) -> List[Dict[str, Any]]:
    """Test accuracy for every (kind, severity) of every ladder."""
    if not test_data.is_image:
        raise ConfigError("Corruptions need image data (set dataset.image_side or use IDX files)",
                          key="dataset.image_side")
    rows = []
    for entry in corruptions:
        for severity in entry['severities']:
            features = apply_corruption(entry['kind'], test_data.features, severity, seed=seed)
            report = evaluate(model, replace(test_data, features=features), project=False)
            rows.append({'kind': entry['kind'], 'severity': severity, 'accuracy': report.accuracy})
            logger.info("%s severity %g: accuracy %.4f", entry['kind'], severity, report.accuracy)
    return rows


def cmd_corrupt_eval(config: ExperimentConfig, out: Path, jobs: int) -> int:
    train_data, test_data = config.load_datasets()
    result: Optional[RunResult] = None
    if config.checkpoint is not None:
        model = load_checkpoint(config.checkpoint)
    else:
        model, result = train(build_train_config(config, train_data, config.seed), train_data, test_data)

    rows = corruption_ladder(model, test_data, config.corruptions or DEFAULT_CORRUPTIONS, config.seed)
    save_table_to_csv(rows, out / "corruption.csv")
    write_json({
        'experiment': config.to_dict(),
        'corruption': rows,
        'run': result.to_dict() if result is not None else None,
    }, out / "results.json")

    print("\n" + "=" * 60)
    print("FIXED CLASSIFIER CORRUPTION LADDERS")
    print("=" * 60)
    for row in rows:
        print(f"  {row['kind']:<12} severity {row['severity']:<6g} accuracy {row['accuracy']:.4f}")
    print("\n" + "=" * 60 + "\n")
    return EXIT_OK


def cmd_export_idx(config: ExperimentConfig, out: Path, jobs: int) -> int:
    train_data, test_data = config.load_datasets()
    InputReader.write_idx(train_data, out / "train-images.idx", out / "train-labels.idx")
    InputReader.write_idx(test_data, out / "test-images.idx", out / "test-labels.idx")
    print(f"✓ Exported {len(train_data)} training and {len(test_data)} test examples to {out}")
    return EXIT_OK


COMMANDS = {
    'run': cmd_run,
    'compare': cmd_compare,
    'sweep': cmd_sweep,
    'corrupt-eval': cmd_corrupt_eval,
    'export-idx': cmd_export_idx,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Experiment configuration (JSON)")
    common.add_argument("--out", help="Output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="Top-level seed (overrides seed)")
    common.add_argument("--jobs", type=int, default=1, help="Worker processes for sweeps")

    verbosity = argparse.ArgumentParser(add_help=False)
    group = verbosity.add_mutually_exclusive_group()
    group.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    group.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    parser = argparse.ArgumentParser(
        prog="fixed_classifier",
        description="Train and analyse classifiers with fixed or learnable class vectors.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common, verbosity])
    template = subparsers.add_parser("template", parents=[verbosity],
                                     help="Write an editable experiment configuration")
    template.add_argument("--out", default=".", help="Directory for experiment_template.json")
    return parser


def _configure_logging(args: argparse.Namespace):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    _configure_logging(args)

    try:
        if args.command == "template":
            create_template_config(args.out)
            return EXIT_OK

        config = InputReader.read_config_from_json(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer", key="seed")
            config.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="jobs")
        out = Path(args.out or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, out, args.jobs)

    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        logger.error("configuration error%s: %s", where, exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGENCE
    except (OSError, FormatError, ConsistencyError, IntegrityError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except FixedHeadError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
