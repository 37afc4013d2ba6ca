"""Command-line entry point: ``sslosr {run,make-split,eval,emit-grid,emit-map}``.

Exit codes: 0 success, 1 run failure (every trial failed, or a runtime
error), 2 usage error (bad flags, invalid config, missing or incompatible
files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from sslosr.errors import ArgumentError, FormatError, IntegrityError, SSLOSRError

log = logging.getLogger("sslosr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _override(cfg, args):
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        updates["trials"] = args.trials
    if getattr(args, "scorer", None) is not None:
        updates["scorer"] = args.scorer
    return cfg.model_copy(update=updates) if updates else cfg


def cmd_run(args) -> int:
    from sslosr.evaluation import format_cell
    from sslosr.experiment import load_config, run_experiment

    cfg = _override(load_config(args.config), args)
    ledger = run_experiment(cfg, args.out, base_dir=Path(args.config).parent, jobs=args.jobs)
    for row in ledger.rows:
        values = [float(row[k]) if row[k] != "" else None for k in ("accuracy", "auroc")]
        print(f"{row['run_id']}: {format_cell(*values)}")
    for fail in ledger.failures:
        print(f"trial {fail['trial']} failed: {fail['error']}", file=sys.stderr)
    if not ledger.rows:
        return EXIT_FAILURE
    agg = ledger.aggregate()
    std = format_cell(*(agg[k]["std"] if k in agg else None for k in ("accuracy", "auroc")))
    print(f"mean over {len(ledger.rows)} trial(s): {ledger.table_cell()}  (std {std})")
    return EXIT_OK


def cmd_make_split(args) -> int:
    from sslosr.experiment import load_config, write_split_manifest

    cfg = _override(load_config(args.config), args)
    split = write_split_manifest(cfg, cfg.base_seed, args.out, base_dir=Path(args.config).parent)
    n = {k: len(getattr(split, k)) for k in ("lab_train", "unlab_train", "test")}
    print(f"wrote {args.out}: K={split.K} lab={n['lab_train']} unlab={n['unlab_train']} test={n['test']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from sslosr.evaluation import evaluate
    from sslosr.experiment import split_from_manifest_file
    from sslosr.training import restore

    split = split_from_manifest_file(args.split)
    state = restore(args.checkpoint)
    if tuple(state.arch.input_shape) != split.sample_shape or state.K != split.K:
        raise IntegrityError(
            f"checkpoint expects inputs {state.arch.input_shape} with K={state.K}, "
            f"split has {split.sample_shape} with K={split.K}"
        )
    report = evaluate(state, split, args.scorer or "preal")
    if args.out:
        report.save(args.out)
    print(report.table_cell())
    return EXIT_OK


def cmd_emit_grid(args) -> int:
    from sslosr.images import emit_sample_grid
    from sslosr.training import restore

    emit_sample_grid(restore(args.checkpoint), args.rows, args.cols, args.out, seed=args.seed or 0)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_emit_map(args) -> int:
    from sslosr.images import emit_score_map
    from sslosr.training import restore

    emit_score_map(restore(args.checkpoint), tuple(args.bounds), args.resolution, args.out, args.scorer or "preal")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sslosr", description="Semi-supervised open-set recognition experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    scorer = dict(choices=["preal", "maxsoftmax"], default=None, help="known-score definition (default preal)")

    run = sub.add_parser("run", help="train and evaluate every trial of a config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("--scorer", **scorer)
    run.add_argument("--jobs", type=int, default=1, help="trials to run in parallel")
    run.set_defaults(func=cmd_run)

    ms = sub.add_parser("make-split", help="write a split manifest for a config")
    ms.add_argument("--config", required=True)
    ms.add_argument("--seed", type=int, help="override base_seed")
    ms.add_argument("--out", required=True)
    ms.set_defaults(func=cmd_make_split)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split manifest")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", required=True, help="split manifest written by make-split or run")
    ev.add_argument("--scorer", **scorer)
    ev.add_argument("--out", help="also write the report here")
    ev.set_defaults(func=cmd_eval)

    eg = sub.add_parser("emit-grid", help="write a grid of generated samples as PPM")
    eg.add_argument("--checkpoint", required=True)
    eg.add_argument("--rows", type=int, default=8)
    eg.add_argument("--cols", type=int, default=8)
    eg.add_argument("--seed", type=int)
    eg.add_argument("--out", required=True)
    eg.set_defaults(func=cmd_emit_grid)

    em = sub.add_parser("emit-map", help="write a 2D known-score map as PPM")
    em.add_argument("--checkpoint", required=True)
    em.add_argument("--bounds", type=float, nargs=4, default=[-1.0, 1.0, -1.0, 1.0], metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    em.add_argument("--resolution", type=int, default=128)
    em.add_argument("--scorer", **scorer)
    em.add_argument("--out", required=True)
    em.set_defaults(func=cmd_emit_map)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ArgumentError, FileNotFoundError, IntegrityError, FormatError) as exc:
        print(f"sslosr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SSLOSRError, OSError) as exc:
        print(f"sslosr: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
