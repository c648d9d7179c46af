"""Command line entry point: ``larc <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
from pathlib import Path
import sys

from . import audit
from .data import SplitSpec, encode_examples, generate_synthetic, read_jsonl, split, write_jsonl
from .errors import ConfigError, LarcError
from .training import TrainingConfig, evaluate, limited_threads, load_model, train

log = logging.getLogger("larc")


def cmd_train(args) -> int:
    cfg = TrainingConfig.from_json(args.config)
    if args.out:
        cfg.out_dir = args.out
    if not cfg.out_dir:
        raise ConfigError("set out_dir in the config or pass --out")
    result = train(cfg)
    summary = {"out_dir": cfg.out_dir, "steps": len(result.history), "best_epoch": result.best_epoch,
               "best_val_weighted_f1": result.best_val_f1}
    if cfg.test_path:
        rep = evaluate(result.model, result.vocab, read_jsonl(cfg.test_path))
        summary["test_weighted_f1"] = rep.weighted_f1
        Path(cfg.out_dir, "test_report.json").write_text(rep.to_json() + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval(args) -> int:
    model, vocab, _, _ = load_model(args.ckpt)
    with limited_threads():
        rep = evaluate(model, vocab, read_jsonl(args.data))
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.confusion_csv:
        Path(args.confusion_csv).write_text(rep.confusion_csv())
    print(text)
    return 0


def cmd_inspect_layers(args) -> int:
    model, _, cfg, _ = load_model(args.ckpt)
    if not cfg.enable_fusion:
        print("checkpoint was trained with layer fusion disabled; no layer weights to show", file=sys.stderr)
        return 2
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(("layer_index", "alpha"))
    for i, a in enumerate(model.fusion.alpha(), start=1):
        out.writerow((i, repr(float(a))))
    return 0


def cmd_export_embeddings(args) -> int:
    model, vocab, _, _ = load_model(args.ckpt)
    examples = read_jsonl(args.data)
    batch = encode_examples(examples, vocab, model.cfg.max_seq_len)
    with limited_threads():
        vecs = model.embed(batch.ids, batch.mask, space=args.space)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"v_{j}" for j in range(vecs.shape[1])])
        for i, (lab, v) in enumerate(zip(batch.labels, vecs)):
            w.writerow([i, int(lab)] + [repr(float(x)) for x in v])
    return 0


def cmd_gradcheck(args) -> int:
    with limited_threads():
        report = audit.gradcheck(seed=args.seed, lam=args.lam)
    print("\n".join(report.lines()))
    return 0 if report.passed else 4


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_per_class = args.n // args.classes
    if n_per_class * args.classes != args.n:
        log.warning("--n %d is not divisible by %d classes; generating %d", args.n, args.classes,
                    n_per_class * args.classes)
    data = generate_synthetic(args.classes, args.vocab_size, n_per_class, args.overlap, seed=args.seed,
                              max_len=args.max_len)
    parts = split(data, SplitSpec(*args.fractions, seed=args.seed))
    for name, part in zip(("train", "val", "test"), parts):
        write_jsonl(out / f"{name}.jsonl", part)
    print(json.dumps({name: len(p) for name, p in zip(("train", "val", "test"), parts)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="larc", description="Layer-attentive residual text classifier")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="overrides out_dir from the config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a JSONL file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="also write the report JSON here")
    s.add_argument("--confusion-csv", help="write the confusion matrix as CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect-layers", help="print learned layer weights as CSV")
    s.add_argument("--ckpt", required=True)
    s.set_defaults(func=cmd_inspect_layers)

    s = sub.add_parser("export-embeddings", help="write per-example vectors as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--space", choices=("fused", "contrastive"), default="fused")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lam", type=float, default=0.15)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("gen-data", help="write a synthetic train/val/test JSONL triple")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--overlap", type=float, required=True)
    s.add_argument("--n", type=int, required=True, help="total number of examples")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--vocab-size", type=int, default=400)
    s.add_argument("--max-len", type=int, default=31)
    s.add_argument("--fractions", type=float, nargs=3, default=(0.64, 0.16, 0.20), metavar=("TRAIN", "VAL", "TEST"))
    s.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LarcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
