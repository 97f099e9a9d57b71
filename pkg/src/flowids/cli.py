"""``flowids`` command line: synth, preprocess, train, evaluate, predict, compare.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure during a run.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluate as E
from . import pipeline as P
from .config import RunConfig, load_config
from .errors import FlowIdsError, InputError, MissingLabelColumn, NumericError
from .flow_ingest import load_directory, parse_csv
from .preprocess import explained_variance_curve
from .synthetic import write_corpus
from .trainer import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _config(args, **flags) -> RunConfig:
    return load_config(getattr(args, "config", None), flags)


def _echo(cfg: RunConfig) -> None:
    _out("# effective configuration")
    for line in cfg.echo():
        _out(f"#   {line}")


def cmd_synth(args) -> int:
    paths = write_corpus(args.out, seed=args.seed, scale=args.scale)
    for p in paths:
        _out(str(p))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args, pca=args.pca, test_fraction=args.test_fraction, seed=args.seed,
                  subsample=args.subsample, min_class_rows=args.min_class_rows)
    table, _ = load_directory(args.data)
    art = P.preprocess_table(table, cfg, log=_out)
    P.save_prep(art, args.out)
    rep = art.clean_report
    _echo(cfg)
    _out(f"dropped columns: {', '.join(rep.dropped_columns) or '-'}")
    _out(f"dropped rows with NaN/Infinity: {rep.dropped_rows} ({rep.nonfinite_cells} cells)")
    _out(f"features: {len(art.feature_names)} -> {art.width} principal components")
    _out("components  cumulative_explained_variance")
    for k, v in explained_variance_curve(art.pca):
        _out(f"{k:>10d}  {v:.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, seed=args.seed, epochs=args.epochs)
    if args.model not in P.MODELS:
        raise P.UnknownModel(f"{args.model!r} is not one of {', '.join(P.MODELS)}")
    art = P.load_prep(args.prep)
    ckpt = P.train_model(art, args.model, cfg, log=None if args.quiet else _out)
    save_checkpoint(ckpt, args.out)
    _echo(cfg)
    if ckpt.history is not None and len(ckpt.history):
        if args.history:
            Path(args.history).write_text(ckpt.history.to_csv(), encoding="utf-8")
        h = ckpt.history
        _out(f"best epoch {h.best_epoch} of {len(h)}{' (early stop)' if h.stopped_early else ''}")
        _out(f"final val accuracy {h.best_val_accuracy:.4f}")
    else:
        fitted = P.predict_projected(ckpt, art.train_x)
        _out(f"train accuracy {float((fitted == art.train_y).mean()):.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    art = P.load_prep(args.prep)
    metrics = P.evaluate_checkpoint(ckpt, art)
    names = art.label_space.names
    _out(f"model {ckpt.kind}")
    _out(E.format_metrics(metrics, names))
    settings = ckpt.meta.get("prep", art.settings)
    _out(f"# split seed {settings.get('seed')}, test fraction {settings.get('test_fraction')}, "
         f"class weights {ckpt.meta.get('config', {}).get('class_weights', False)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "confusion.csv").write_text(E.confusion_csv(metrics, names), encoding="utf-8")
        (out / "metrics.txt").write_text(E.format_metrics(metrics, names), encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    raw = Path(args.data).read_bytes()
    try:
        table = parse_csv(raw)
    except MissingLabelColumn:
        table = parse_csv(raw, expected_label_column=None)
    x, kept = P.project_raw(ckpt, table)
    labels = P.predict_projected(ckpt, x) if kept.size else []
    names = ckpt.label_space.names
    lines = ["row,prediction"] + [f"{int(r)},{names[int(l)]}" for r, l in zip(kept, labels)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    skipped = table.n_rows - kept.size
    if skipped:
        sys.stderr.write(f"skipped {skipped} rows with NaN/Infinity cells\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        results = E.parse_results(Path(args.results).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = E.comparison_table(results, args.proposed)
    _out(E.format_report(report).rstrip("\n"))
    if args.csv:
        Path(args.csv).write_text(E.report_csv(report), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowids", description="Flow-based intrusion detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus in the CICIDS2017 CSV layout")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="clean, split, scale and project a CSV directory")
    p.add_argument("--data", required=True, help="directory of CSV files")
    p.add_argument("--out", required=True, help="artifact file to write")
    p.add_argument("--pca", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--subsample", type=int, help="approximate total rows to keep (stratified)")
    p.add_argument("--min-class-rows", type=int, help="drop classes smaller than this")
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a preprocessing artifact")
    p.add_argument("--prep", required=True)
    p.add_argument("--model", required=True, help="|".join(P.MODELS))
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--history", help="write per-epoch history CSV here")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on an artifact's test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prep", required=True)
    p.add_argument("--out", help="directory for confusion.csv and metrics.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label the rows of a raw CSV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="CSV file in the training layout")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="accuracy comparison table with deltas")
    p.add_argument("--results", required=True, help="file of model=accuracy lines")
    p.add_argument("--proposed", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except NumericError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERIC
    except (FlowIdsError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
