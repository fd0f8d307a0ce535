"""Command-line entry point: ``wmspot {generate,stats,eval-det,eval-rec,selfcheck}``.

Exit codes: 0 success, 1 failed check or page, 2 usage/config/data, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    GeneratorConfig,
    Manifest,
    PageFailures,
    compute_stats,
    generate_epoch,
    generate_split,
    list_pages,
    load_text_boxes,
)
from .errors import ConfigError, DataError
from .metrics import (
    PageEval,
    char_accuracy,
    evaluate,
    load_predictions,
    majority_vote,
)

log = logging.getLogger("wmspot")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def _write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(args: argparse.Namespace) -> int:
    config = GeneratorConfig.from_file(args.config, seed=args.seed, out_dir=args.out, workers=args.workers)
    pages = list_pages(config.pages_dir)
    if not pages:
        raise ConfigError(f"no PNG pages in {config.pages_dir}")
    try:
        if args.epochs:
            for epoch in range(args.epochs):
                manifest = generate_epoch(pages, config, epoch)
                print(f"epoch {epoch}: {len(manifest.records)} pages")
        else:
            manifest = generate_split(pages, config)
            print(f"{manifest.split}: {len(manifest.records)} pages -> {Path(config.out_dir) / 'manifest.json'}")
    except PageFailures as exc:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "errors.log").write_text("".join(f"{src}\t{err}\n" for src, err in exc.failures), encoding="utf-8")
        print(f"error: {exc} (see {out / 'errors.log'})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    manifest = Manifest.read(args.manifest)
    text_boxes = load_text_boxes(args.text_boxes) if args.text_boxes else None
    stats = compute_stats(manifest, text_boxes, args.pages)
    if stats.n_pages == 0:
        print("warning: empty split, all statistics are 0", file=sys.stderr)
    print(stats.table_row(manifest.split))
    out = Path(args.out) if args.out else Path(args.manifest).with_name("stats.json")
    _write_json(out, stats.to_dict())
    return EXIT_OK


def _match_ids(manifest: Manifest, preds: dict) -> None:
    orphans = sorted(set(preds) - set(manifest.by_id()))
    if orphans:
        raise DataError(f"predictions for unknown image_id(s): {', '.join(orphans)}")


def cmd_eval_det(args: argparse.Namespace) -> int:
    manifest = Manifest.read(args.manifest)
    preds = load_predictions(args.predictions)
    _match_ids(manifest, preds)
    pages = [
        PageEval(preds[r.image_id].predictions if r.image_id in preds else [], r.annotation.boxes, r.width, r.height)
        for r in manifest.records
    ]
    report = evaluate(pages)
    print("  ".join(f"{k:>6}" for k in report.headline()))
    print("  ".join(f"{100 * v:6.2f}" for v in report.headline().values()))
    if report.vacuous:
        print("note: no ground truth and no predictions (vacuous report)")
    if args.out:
        _write_json(args.out, report.to_dict())
    return EXIT_OK


def document_prediction(page, vote: bool) -> str | None:
    texts = [p.text for p in page.predictions if p.text is not None]
    if vote:
        return majority_vote(texts) if texts else page.text
    if page.text is not None:
        return page.text
    scored = [p for p in page.predictions if p.text is not None]
    return max(scored, key=lambda p: p.score).text if scored else None


def cmd_eval_rec(args: argparse.Namespace) -> int:
    manifest = Manifest.read(args.manifest)
    preds = load_predictions(args.predictions)
    _match_ids(manifest, preds)
    scores = {}
    for rec in manifest.records:
        truth = rec.annotation.word
        if not truth:
            continue
        page = preds.get(rec.image_id)
        text = document_prediction(page, args.vote) if page is not None else None
        if text is None:
            print(f"warning: {rec.image_id} has no text prediction, scored 0", file=sys.stderr)
            scores[rec.image_id] = 0.0
        else:
            scores[rec.image_id] = char_accuracy(text, truth)
    values = np.array(list(scores.values()), dtype=np.float64)
    mean = float(values.mean()) if values.size else 0.0
    std = float(values.std()) if values.size else 0.0
    print(f"character accuracy {mean:.4f} ± {std:.4f} over {values.size} documents")
    if args.out:
        _write_json(args.out, {"mean": mean, "std": std, "documents": scores, "vote": args.vote})
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    from . import _backend
    from .selfcheck import run_selfcheck

    print(f"backend: {_backend.BACKEND}")
    results = run_selfcheck(args.suite or None)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name:<12} {r.seconds:6.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selfcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmspot", description="Watermark text pattern dataset and evaluation tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a watermarked split from clean pages")
    p.add_argument("config", help="JSON generator config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--epochs", type=int, default=0, help="render N dynamic epochs instead of one static split")
    p.add_argument("--workers", type=int, help="parallel page workers")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="watermark count and overlap statistics of a split")
    p.add_argument("manifest")
    p.add_argument("--text-boxes", help="JSON {image_id: [[x0,y0,x1,y1,angle], ...]} of document text")
    p.add_argument("--pages", help="clean pages directory (defaults to the manifest's)")
    p.add_argument("--out", help="output path (default: stats.json next to the manifest)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval-det", help="rotated detection AP/AR")
    p.add_argument("manifest")
    p.add_argument("predictions")
    p.add_argument("--out", help="write the report as JSON (0-1 scale)")
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("eval-rec", help="document-level character accuracy")
    p.add_argument("manifest")
    p.add_argument("predictions")
    p.add_argument("--vote", action="store_true", help="majority-vote per-box texts into one answer")
    p.add_argument("--out", help="write per-document scores as JSON")
    p.set_defaults(func=cmd_eval_rec)

    p = sub.add_parser("selfcheck", help="run numerical self-checks")
    p.add_argument("--suite", action="append", choices=["gradients", "iou_oracle", "beta_cdf", "determinism", "attention"])
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
