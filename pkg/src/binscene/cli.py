"""Command-line entry point: ``binscene {render,train,eval,sweep,s3r}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio, rig, training
from .errors import BinsceneError, ConfigurationError

log = logging.getLogger("binscene")

SWEEP_PREFIX = "sweep."


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_channels(text: str) -> str:
    ids = [int(c) for c in text.split(",") if c.strip()]
    if not ids or any(not 1 <= c <= 8 for c in ids):
        raise argparse.ArgumentTypeError(f"channel ids must be in 1..8, got {text!r}")
    return ",".join(map(str, ids))


def _parse_pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in text.split(";"):
        a, _, b = chunk.partition(",")
        try:
            pairs.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"pairs look like '1,6' or '1,6;4,7', got {text!r}")
    return pairs


def _run_config(args) -> training.RunConfig:
    kv = fileio.read_kv(args.config)
    if getattr(args, "out", None):
        kv["out"] = args.out
    if getattr(args, "seed", None) is not None:
        kv["seed"] = str(args.seed)
    if getattr(args, "channels", None):
        kv["input_channels"] = args.channels
    return training.RunConfig.from_kv(kv)


# -- subcommands --------------------------------------------------------------------

def cmd_render(args) -> int:
    kv = fileio.read_kv(args.config)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    cfg = rig.DatasetConfig.from_kv(kv)
    rows = rig.generate_dataset(cfg, args.out)
    counts = {s: sum(1 for _, x in rows if x == s) for s in ("train", "val", "test")}
    print(f"rendered {len(rows)} samples to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    result = training.train(run, progress=lambda r: print(
        f"epoch {r['epoch']}  steps {r['steps']}  total {r['total']:.5f}  val {r['val_score']:.4f}"))
    print(f"checkpoints in {result['out']} (best validation score {result['best_score']:.4f})")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    report, rows = training.evaluate(args.checkpoint, args.split, args.amp, dataset=args.dataset)
    report["amp"] = args.amp
    out = Path(args.out) if args.out else Path(args.checkpoint) / f"eval_{args.split}_amp{args.amp:g}"
    training.write_report(out, report, rows)
    sys.stdout.write(fileio.format_kv(report))
    return 0


def _sweep_cells(spec: dict) -> tuple[dict, list[dict]]:
    base = {k: v for k, v in spec.items() if not k.startswith(SWEEP_PREFIX)}
    axes = {k[len(SWEEP_PREFIX):]: [v.strip() for v in spec[k].split("|") if v.strip()]
            for k in spec if k.startswith(SWEEP_PREFIX)}
    if not axes or any(not vals for vals in axes.values()):
        raise ConfigurationError("sweep spec needs at least one non-empty 'sweep.<key> = a | b' axis")
    names = sorted(axes)
    cells = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    return base, cells


def _run_cell(job) -> dict:
    i, base, cell, out_root = job
    row = {"cell": i, **cell}
    try:
        kv = dict(base, **cell)
        kv["out"] = str(Path(out_root) / f"cell{i:03d}")
        run = training.RunConfig.from_kv(kv)
        training.train(run)
        report, rows = training.evaluate(Path(run.out) / "best", "test")
        training.write_report(Path(run.out) / "eval_test", report, rows)
        row.update({k: v for k, v in report.items() if k not in ("split", "n")})
        row["status"] = "ok"
    except (BinsceneError, ValueError, OSError) as exc:
        row["status"] = f"failed: {exc}"
    return row


def cmd_sweep(args) -> int:
    spec = fileio.read_kv(args.config)
    if args.seed is not None:
        spec["seed"] = str(args.seed)
    base, cells = _sweep_cells(spec)
    out_root = fileio.ensure_dir(args.out or base.get("out", "sweep"))
    jobs = [(i, base, cell, str(out_root)) for i, cell in enumerate(cells)]
    if args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    cols = []
    for r in results:
        cols += [k for k in r if k not in cols and k != "status"]
    cols.append("status")
    lines = ["\t".join(cols)]
    for r in results:
        lines.append("\t".join(str(r.get(c, "")) for c in cols))
    table = "\n".join(lines) + "\n"
    (out_root / "results.tsv").write_text(table)
    sys.stdout.write(table)
    failed = sum(1 for r in results if r["status"] != "ok")
    if failed:
        print(f"{failed} of {len(results)} cells failed", file=sys.stderr)
    return 0


def cmd_s3r(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("s3r needs --checkpoint")
    if not args.input or not args.out:
        raise ConfigurationError("s3r needs --input and --out")
    audio, sr = fileio.read_audio(args.input)
    waves = training.s3r_infer(args.checkpoint, audio, sr, args.pairs)
    fileio.write_audio(args.out, waves.reshape(-1, waves.shape[-1]).astype(np.float32), sr)
    print(f"wrote {waves.shape[0]} pair(s), {waves.shape[-1]} samples each, to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="binscene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", help="simulate a dataset of rig recordings")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--channels", type=_parse_channels, help="input channel ids, e.g. 3,8")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--amp", type=float, default=1.0, help="input amplitude multiplier")
    p.add_argument("--dataset", help="override the dataset path stored in the checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate every cell of an ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("s3r", help="predict binaural audio at other head orientations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="BSNA file: 8 rig channels or the (3,8) pair")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=_parse_pairs, help="target pairs, e.g. 1,6 or 1,6;4,7")
    p.set_defaults(func=cmd_s3r)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BinsceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
