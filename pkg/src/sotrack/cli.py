"""Command line: ``sotrack track|bench|plot``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import Config, load_config
from .eval import (FRAGILE_SEQUENCES, PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS, DatasetError, EvalResult,
                   Sequence, evaluate, list_sequences, load_sequence, mean_curves, read_summary, svg_curve,
                   write_boxes, write_curves_csv, write_summary)
from .features import load_cn_table, load_frame
from .tracker import Tracker

log = logging.getLogger("sotrack")


def iter_frames(seq: Sequence, force_gray: bool = False):
    for i, path in enumerate(seq.frames, start=1):
        yield load_frame(path, i, force_gray=force_gray)


def run_track(config: Config, seq: Sequence, out_dir: str | Path | None = None) -> tuple[EvalResult, list]:
    """Track one sequence from its first ground-truth box; write ``<name>.txt`` if ``out_dir`` is given."""
    table = load_cn_table() if config.use_color else None
    tracker = Tracker(config, table)
    boxes = []
    start = time.perf_counter()
    for frame in iter_frames(seq, force_gray=not config.use_color):
        if not boxes:
            boxes.append(tracker.init(frame, seq.init_box))
        else:
            boxes.append(tracker.step(frame)[0])
    elapsed = time.perf_counter() - start
    fps = len(boxes) / elapsed if elapsed > 0 else float("inf")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_boxes(out / f"{seq.name}.txt", boxes)
    return evaluate(boxes, seq, fps), boxes


def _report(results: list[EvalResult], stream) -> None:
    for r in sorted(results, key=lambda r: r.name):
        flag = "  [fragile]" if r.name in FRAGILE_SEQUENCES else ""
        print(f"{r.name:24s} AUC {100 * r.auc:5.1f}  DP@20 {100 * r.dp20:5.1f}  {r.fps:6.1f} fps{flag}", file=stream)
    if results:
        auc = sum(r.auc for r in results) / len(results)
        dp = sum(r.dp20 for r in results) / len(results)
        print(f"{'mean':24s} AUC {100 * auc:5.1f}  DP@20 {100 * dp:5.1f}  ({len(results)} sequences)", file=stream)


def cmd_track(args, cfg: Config) -> int:
    seq = load_sequence(args.sequence)
    result, _ = run_track(cfg, seq, args.out)
    write_summary(Path(args.out) / "summary.json", [result], {"config": args.config})
    _report([result], sys.stdout)
    return 0


def cmd_bench(args, cfg: Config) -> int:
    dirs = list_sequences(args.dataset)
    if args.seq:
        wanted = set(args.seq)
        dirs = [d for d in dirs if d.name in wanted]
        missing = wanted - {d.name for d in dirs}
        if missing:
            raise DatasetError(f"sequences not found: {', '.join(sorted(missing))}")
    if not dirs:
        raise DatasetError(f"{args.dataset}: no sequences found")
    seqs = [load_sequence(d) for d in dirs]

    def work(seq):
        result, _ = run_track(cfg, seq, args.out)
        log.info("%s: AUC %.3f DP %.3f", seq.name, result.auc, result.dp20)
        return result

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(work, seqs))
    write_summary(Path(args.out) / "summary.json", results, {"config": args.config, "dataset": str(args.dataset)})
    _report(results, sys.stdout)
    return 0


def cmd_plot(args, cfg: Config) -> int:
    doc = read_summary(args.summary)
    success, precision = mean_curves(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(doc["sequences"])
    (out / "success.svg").write_text(svg_curve(SUCCESS_THRESHOLDS, success, f"Success plot ({n} sequences)",
                                               "overlap threshold", "success rate"))
    (out / "precision.svg").write_text(svg_curve(PRECISION_THRESHOLDS, precision, f"Precision plot ({n} sequences)",
                                                 "location error threshold (px)", "precision"))
    write_curves_csv(out / "success.csv", SUCCESS_THRESHOLDS, success, "threshold", "success")
    write_curves_csv(out / "precision.csv", PRECISION_THRESHOLDS, precision, "threshold", "precision")
    print(f"wrote {out / 'success.svg'} and {out / 'precision.svg'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--no-color", action="store_true", help="grayscale mode: no color features or color test")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv per-frame debug log")

    p = argparse.ArgumentParser(prog="sotrack", description="Unsupervised single-object tracker and OPE harness.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("track", parents=[common], help="track one sequence directory")
    t.add_argument("sequence", help="sequence directory (img/ + groundtruth file)")
    b = sub.add_parser("bench", parents=[common], help="run every sequence under a dataset root")
    b.add_argument("dataset", help="dataset root holding one directory per sequence")
    b.add_argument("--seq", action="append", help="only this sequence (repeatable)")
    b.add_argument("--jobs", type=int, default=1, help="parallel worker threads")
    pl = sub.add_parser("plot", parents=[common], help="render success/precision curves from summary.json")
    pl.add_argument("summary", help="summary.json written by track or bench")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as e:
        parser.error(f"bad config: {e}")
    if args.no_color:
        cfg = replace(cfg, use_color=False)
    handlers = {"track": cmd_track, "bench": cmd_bench, "plot": cmd_plot}
    try:
        return handlers[args.command](args, cfg)
    except DatasetError as e:
        parser.print_usage(sys.stderr)
        print(f"sotrack: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"sotrack: I/O error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
