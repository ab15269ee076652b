"""
Command-line interface.

    python -m jiadf gen-data  --out data.csv [--classes 3 --counts 400,100,20 | --preset milk10k]
    python -m jiadf train     --data data.csv --out runs/jiadf [--variant ji-adf --modalities c+d+m]
    python -m jiadf eval      --ckpt runs/jiadf/best --data data.csv [--split test --dump-posteriors]
    python -m jiadf ablate    --suite modality --data data.csv --out ablation.csv [--seeds 3]
    python -m jiadf gradcheck [--tol 1e-5 --seed 0]
    python -m jiadf schema

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff import check_gradients
from .config import AppConfig, FusionVariant, MMFAVariant, ModelConfig, init_config, parse_modalities
from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DegenerateProbabilityError,
    DimensionError,
    GraphStateError,
    LabelError,
    NonFiniteError,
    NumericalFailure,
    UndefinedMetricError,
)
from .logging_config import log_performance, setup_logging
from .metrics import evaluate_predictions
from .models.ji_adf import batch_loss, group_names, init_params
from .reports import metrics_document, run_report_schema
from .utils.checkpoint import load_checkpoint
from .utils.dataset import (
    Batch,
    DatasetSpec,
    Split,
    default_class_names,
    generate,
    inverse_frequency_weights,
    load_csv,
    milk10k_spec,
    split_train_val,
    tag_test_split,
    write_csv,
)
from .workers.ablation import SUITES, run_suite, summarize, write_rows
from .workers.trainer import LAST_DIR, Trainer, build_run_report, posterior_rows, predict_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _write_json(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")


def _fit_model_config(model: ModelConfig, table) -> ModelConfig:
    """Raw widths and class count always come from the data"""
    widths = table.widths
    return replace(model, dc=widths["c"], dd=widths["d"], dm_raw=widths["m"], n_classes=table.n_classes)


def _apply_model_flags(model: ModelConfig, args) -> ModelConfig:
    updates = {}
    if getattr(args, "variant", None):
        updates["fusion_variant"] = FusionVariant(args.variant)
    if getattr(args, "mmfa_variant", None):
        updates["mmfa_variant"] = MMFAVariant(args.mmfa_variant)
    if getattr(args, "modalities", None):
        updates["modalities"] = parse_modalities(args.modalities)
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return replace(model, **updates) if updates else model


def _apply_train_flags(config: AppConfig, args):
    train = config.train
    for flag, name in (("epochs", "epochs"), ("batch", "batch_size"), ("lr", "lr"),
                       ("weight_decay", "weight_decay"), ("val_fraction", "val_fraction"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            train = replace(train, **{name: value})
    return train


# Commands


def cmd_gen_data(args, config: AppConfig) -> int:
    data = config.data
    seed = args.seed if args.seed is not None else data.seed
    overrides = {
        "dc": args.dc if args.dc is not None else data.dc,
        "dd": args.dd if args.dd is not None else data.dd,
        "dm_raw": args.dm if args.dm is not None else data.dm_raw,
        "snr_c": next(v for v in (args.snr_c, args.snr, data.snr_c) if v is not None),
        "snr_d": next(v for v in (args.snr_d, args.snr, data.snr_d) if v is not None),
        "snr_m": next(v for v in (args.snr_m, args.snr, data.snr_m) if v is not None),
        "complementary": data.complementary and not args.no_complementary,
        "seed": seed,
    }
    if args.preset == "milk10k":
        spec = milk10k_spec(args.scale, **overrides)
    else:
        n_classes = args.classes if args.classes is not None else data.n_classes
        counts = args.counts if args.counts is not None else data.counts
        spec = DatasetSpec(n_classes=n_classes, counts=counts, **overrides)
    spec.validate()

    test_fraction = args.test_fraction if args.test_fraction is not None else data.test_fraction
    table = tag_test_split(generate(spec), test_fraction, seed)
    write_csv(table, args.out)

    print(f"Wrote {len(table)} records to {args.out}")
    for name, total, test in zip(table.class_names, table.class_counts(), table.class_counts(Split.TEST)):
        print(f"  {name}: {total} ({test} test)")
    return EXIT_OK


def cmd_train(args, config: AppConfig) -> int:
    out_dir = Path(args.out)
    table = load_csv(args.data)

    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        model_config = checkpoint.config
        train_config = replace(config.train, **checkpoint.manifest.train)
        if args.epochs is not None:
            train_config = replace(train_config, epochs=args.epochs)
    else:
        checkpoint = None
        model_config = _apply_model_flags(_fit_model_config(config.model, table), args)
        train_config = _apply_train_flags(config, args)

    table = split_train_val(table, 1.0 - train_config.val_fraction, train_config.seed)
    if checkpoint is None and args.class_weights == "inverse-frequency":
        weights = inverse_frequency_weights(table.labels[table.indices(Split.TRAIN)], table.n_classes)
        model_config = replace(model_config, class_weights=weights)
    if _fit_model_config(model_config, table) != model_config:
        raise DataFormatError(f"dataset widths {table.widths} do not match the model configuration")

    result = Trainer(table, model_config, train_config, out_dir=out_dir, run_name=args.run_name).fit(checkpoint)
    report = build_run_report(result, table, train_config, data_path=str(args.data))
    report_path = Path(args.report) if args.report else out_dir / "report.json"
    _write_json(report_path, report.model_dump_json(indent=2))

    print(f"Best validation macro-F1 {result.best_val_macro_f1} at epoch {result.best_epoch}")
    print(f"Checkpoints in {out_dir}; report {report_path}")
    return EXIT_OK


def cmd_eval(args, config: AppConfig) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    table = load_csv(args.data)
    model_config = checkpoint.config
    if table.widths != {"c": model_config.dc, "d": model_config.dd, "m": model_config.dm_raw}:
        raise DataFormatError(
            f"dataset widths {table.widths} do not match the checkpoint "
            f"(c={model_config.dc}, d={model_config.dd}, m={model_config.dm_raw})"
        )
    if table.n_classes > model_config.n_classes:
        raise DataFormatError(f"dataset has {table.n_classes} classes, checkpoint {model_config.n_classes}")
    class_names = list(checkpoint.manifest.class_names) or table.class_names
    if len(class_names) != model_config.n_classes:
        class_names = default_class_names(model_config.n_classes)

    split = Split(args.split)
    if table.indices(split).size == 0:
        raise DataFormatError(f"dataset has no '{split.value}' records")
    preds, ids = predict_table(checkpoint.store, model_config, table, split)
    report = evaluate_predictions(preds, class_names)
    document = metrics_document(report, split=split.value,
                                posteriors=posterior_rows(preds, ids) if args.dump_posteriors else None)

    text = document.model_dump_json(indent=2)
    if args.report:
        _write_json(Path(args.report), text)
        print(f"Macro AUC {report.macro['auc']}, accuracy {report.overall_accuracy:.4f}, "
              f"macro-F1 {report.macro_f1:.4f}, ECE {report.ece:.4f}; report {args.report}")
    else:
        print(text)
    return EXIT_OK


def cmd_ablate(args, config: AppConfig) -> int:
    table = load_csv(args.data)
    train_config = _apply_train_flags(config, args)
    base = _fit_model_config(config.model, table)
    table = split_train_val(table, 1.0 - train_config.val_fraction, train_config.seed)
    seeds = [train_config.seed + i for i in range(args.seeds)]

    rows = run_suite(args.suite, table, base, train_config, seeds)
    write_rows(rows, args.out)
    for name, value in summarize(rows).items():
        print(f"{name:>16}  macro AUC {value:.4f}")
    print(f"Wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def gradcheck_config(variant: FusionVariant = FusionVariant.JI_ADF, seed: int = 0) -> ModelConfig:
    """The small configuration used for finite-difference verification"""
    return ModelConfig(dc=4, dd=4, dm_raw=3, enc_hidden=5, d_img=6, d_meta=6, d_joint=8, heads=2, head_dim=3,
                       gate_hidden=8, n_classes=3, fusion_variant=variant, seed=seed)


def gradcheck_problem(variant: FusionVariant = FusionVariant.JI_ADF, seed: int = 0, batch_size: int = 4):
    """(config, store, batch) with the gate output layer randomized so every group sees gradient"""
    config = gradcheck_config(variant, seed)
    store = init_params(config, seed)
    rng = np.random.default_rng([seed, 1])
    store.set_value("gate.l2.w", rng.normal(0.0, 0.5, store.value("gate.l2.w").shape))
    store.set_value("gate.l2.b", rng.normal(0.0, 0.5, store.value("gate.l2.b").shape))
    for name in store.names():
        if name.endswith(".b"):
            store.set_value(name, rng.normal(0.0, 0.1, store.value(name).shape))
    batch = Batch(
        ids=[f"g{i}" for i in range(batch_size)],
        y=rng.integers(0, config.n_classes, batch_size),
        c=rng.standard_normal((batch_size, config.dc)),
        d=rng.standard_normal((batch_size, config.dd)),
        m=rng.standard_normal((batch_size, config.dm_raw)),
    )
    return config, store, batch


def cmd_gradcheck(args, config: AppConfig) -> int:
    variants = list(FusionVariant) if args.variant == "all" else [FusionVariant(args.variant)]
    seed = args.seed if args.seed is not None else 0
    failed = []
    for variant in variants:
        model_config, store, batch = gradcheck_problem(variant, seed, args.batch)
        report = check_gradients(lambda s, g: batch_loss(s, batch, model_config, g), store, h=args.h,
                                 tolerance=args.tol)
        print(f"{variant.value}: worst relative error {report.worst_error:.3e} ({report.worst_parameter})")
        for group, names in group_names(store).items():
            print(f"  {group:<12} {max(report.errors[n] for n in names):.3e}")
        log_performance("gradcheck_worst_relative_error", report.worst_error, "",
                        {"variant": variant.value, "seed": seed})
        if not report.passed:
            failed.append(variant.value)

    if failed:
        raise NumericalFailure(f"gradient check above tolerance {args.tol:g} for: {', '.join(failed)}")
    print(f"PASS (tolerance {args.tol:g})")
    return EXIT_OK


def cmd_schema(args, config: AppConfig) -> int:
    print(json.dumps(run_report_schema(), indent=2))
    return EXIT_OK


# Parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="jiadf", description="Joint-individual multimodal fusion classifier")
    parser.add_argument("--config", help="YAML or JSON configuration document")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-file", help="also log to this rotating file")
    parser.add_argument("--json-logs", action="store_true", help="structured JSON log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic trimodal dataset CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--counts", type=_int_list, help="per-class counts, e.g. 400,100,20")
    p.add_argument("--preset", choices=["milk10k"], help="long-tailed eleven-class preset")
    p.add_argument("--scale", type=float, default=1.0, help="count multiplier for --preset")
    p.add_argument("--dc", type=int)
    p.add_argument("--dd", type=int)
    p.add_argument("--dm", type=int)
    p.add_argument("--snr", type=float, help="signal-to-noise ratio for every block")
    p.add_argument("--snr-c", type=float)
    p.add_argument("--snr-d", type=float)
    p.add_argument("--snr-m", type=float)
    p.add_argument("--no-complementary", action="store_true")
    p.add_argument("--test-fraction", type=float)
    p.set_defaults(func=cmd_gen_data)

    def training_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--val-fraction", type=float)

    p = sub.add_parser("train", help="train a model with best/last checkpoints")
    training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint directory (holds best/ and last/)")
    p.add_argument("--variant", choices=[v.value for v in FusionVariant])
    p.add_argument("--mmfa-variant", choices=[v.value for v in MMFAVariant])
    p.add_argument("--modalities", help="subset of c, d, m, e.g. c+d+m")
    p.add_argument("--class-weights", choices=["none", "inverse-frequency"], default="none")
    p.add_argument("--resume", help=f"checkpoint to continue from, usually <out>/{LAST_DIR}")
    p.add_argument("--report", help="run report path (default <out>/report.json)")
    p.add_argument("--run-name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    p.add_argument("--report", help="write the metrics document here instead of stdout")
    p.add_argument("--dump-posteriors", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation suite")
    training_flags(p)
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True, help="results CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="compare backward() with finite differences")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--variant", choices=[v.value for v in FusionVariant] + ["all"],
                   default=FusionVariant.JI_ADF.value)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("schema", help="print the run report JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = init_config(args.config)
    except ConfigError as e:
        print(f"jiadf: {e}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.log_level or config.log_level, args.log_file or config.log_file,
                  args.json_logs or config.json_logs)

    try:
        return args.func(args, config)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, UndefinedMetricError, LabelError, OSError) as e:
        logger.error(str(e))
        return EXIT_DATA
    except (NumericalFailure, NonFiniteError, DegenerateProbabilityError, DimensionError, GraphStateError) as e:
        logger.error(str(e))
        return EXIT_NUMERIC
