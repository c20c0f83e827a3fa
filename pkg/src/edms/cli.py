"""Command-line interface.

Exit codes: 0 success, 1 usage or other error, 2 malformed input or weight
digest mismatch, 3 synthesis verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import train as tr
from .errors import FormatError, MissingWeightsError, SynthesisMismatchError
from .imageio import read_pgm, read_ppm, write_pgm, write_ppm
from .nets import WeightSet, load_weights, save_weights
from .pipeline import decode, encode, verify_matched

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_MISMATCH = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _q_list(text: str) -> list[int]:
    try:
        qs = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad q list {text!r}") from None
    if not qs or any(not 1 <= q <= 64 for q in qs):
        raise argparse.ArgumentTypeError("q values must be integers in [1, 64]")
    return qs


def _variants(text: str) -> list[str]:
    if text == "both":
        return list(ev.VARIANTS)
    names = {"with": "with-enhancement", "without": "without-enhancement"}
    out = [names.get(t, t) for t in text.split(",")]
    for v in out:
        if v not in ev.VARIANTS:
            raise argparse.ArgumentTypeError(f"unknown variant {v!r}")
    return out


# --- dataset directories ----------------------------------------------------

def write_dataset(out: Path, data) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for i, (img, cmap) in enumerate(data):
        write_ppm(out / f"{i:04d}.ppm", img)
        write_pgm(out / f"{i:04d}.pgm", cmap)


def read_images(path: Path) -> list[tuple[str, np.ndarray]]:
    if path.is_file():
        return [(path.stem, read_ppm(path))]
    files = sorted(path.glob("*.ppm"))
    if not files:
        raise UsageError(f"no .ppm images in {path}")
    return [(f.stem, read_ppm(f)) for f in files]


def read_labelled(path: Path):
    data = []
    for name, img in read_images(path):
        label = path / f"{name}.pgm"
        if not label.exists():
            raise UsageError(f"{name}.ppm has no matching {name}.pgm")
        cmap = read_pgm(label)
        if cmap.shape != img.shape[:2]:
            raise UsageError(f"{name}: label and image dims differ")
        data.append((img, cmap))
    return data


def _write_bytes(path: Path, data: bytes) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _stats_csv(stats) -> str:
    cols = ["width", "height", "bpp", "header_bytes", "compact_bytes", "residual_bytes",
            "hash_bytes", "psnr", "ms_ssim", "encode_s", "decode_s", "synth_hash"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    w.writerow([ev._fmt(getattr(stats, c)) for c in cols])
    return buf.getvalue()


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    data = tr.gen_dataset(args.seed, args.count, args.size, args.classes)
    write_dataset(Path(args.out), data)
    print(f"wrote {len(data)} image/label pairs to {args.out}")
    return EXIT_OK


_NEEDS = {"segmenter": (), "base": (), "smapnet": ("segmenter", "compnet", "finenet")}


def cmd_train(args) -> int:
    base = load_weights(args.weights_in) if args.weights_in else WeightSet({})
    missing = [n for n in _NEEDS[args.stage] if not base.has_network(n)]
    if missing:
        raise UsageError(f"stage {args.stage} needs trained {', '.join(missing)} weights (--weights-in)")
    data = read_labelled(Path(args.data))
    size = data[0][0].shape[0]
    classes = args.classes or max(2, int(max(m.max() for _, m in data)) + 1)
    cfg = tr.TrainConfig(stage=args.stage, batch_size=args.batch, lr=args.lr, epochs=args.epochs,
                         seed=args.seed, image_size=size, width=args.width,
                         smap_width=args.smap_width, classes=classes)
    history: list = []
    if args.stage == "segmenter":
        out = base.merged(tr.train_segmenter(cfg, data, history))
    elif args.stage == "base":
        out = base.merged(tr.train_base(cfg, data, history))
    else:
        out = tr.train_smapnet(cfg, data, base, history)
    save_weights(out, args.weights_out)
    if args.loss_log:
        ev.write_csv(args.loss_log, history, ("epoch", "stage", "loss"))
    if history:
        print(f"{args.stage}: {len(history)} epochs, final loss {history[-1][2]:.6f}")
    print(f"weights digest {out.digest.hex()}")
    return EXIT_OK


def cmd_encode(args) -> int:
    w = load_weights(args.weights)
    img = read_ppm(args.input)
    data, stats = encode(img, w, args.q, embed_hash=args.embed_synth_hash, enhance=not args.no_enhance)
    _write_bytes(Path(args.out), data)
    sys.stdout.write(_stats_csv(stats))
    return EXIT_OK


def cmd_decode(args) -> int:
    w = load_weights(args.weights)
    img, stats = decode(Path(args.input).read_bytes(), w)
    write_ppm(args.out, img)
    sys.stdout.write(_stats_csv(stats))
    return EXIT_OK


def cmd_verify(args) -> int:
    w = load_weights(args.weights)
    report = verify_matched(Path(args.input).read_bytes(), w)
    status = "match" if report.match else "mismatch"
    print(f"{status} stored={report.stored_hash} recomputed={report.recomputed_hash} bpp={report.bpp:.6f}")
    if report.reason:
        print(report.reason, file=sys.stderr)
    return EXIT_OK if report.match else EXIT_MISMATCH


def _run_eval(args):
    w = load_weights(args.weights)
    images = read_images(Path(args.data))
    rows, failures = ev.evaluate(images, w, args.q_list, args.variants, workers=args.workers)
    if failures:
        print(f"{len(failures)} encode/decode failures (see log)", file=sys.stderr)
    return rows


def cmd_eval(args) -> int:
    rows = _run_eval(args)
    ev.write_csv(args.csv, rows, ev.ROW_COLUMNS)
    print(f"wrote {len(rows)} rows to {args.csv}")
    return EXIT_OK


def cmd_rd_curve(args) -> int:
    points = ev.rd_points(_run_eval(args))
    ev.write_csv(args.csv, points, ev.RD_COLUMNS)
    sys.stdout.write(ev.to_csv(points, ev.RD_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edms", description="Layered image codec with matched semantic side information.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic labelled dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one stage: segmenter, base, then smapnet")
    t.add_argument("--stage", choices=tr.STAGES, required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--width", type=int, default=64, help="CompNet/FineNet base filter count")
    t.add_argument("--smap-width", type=int, default=64, help="SMapNet filter count")
    t.add_argument("--classes", type=int, default=None, help="segment classes (default: from labels)")
    t.add_argument("--weights-in")
    t.add_argument("--weights-out", required=True)
    t.add_argument("--loss-log", help="CSV of (epoch, stage, loss)")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("encode", cmd_encode, "compress a PPM image"),
                                 ("decode", cmd_decode, "decompress to a PPM image"),
                                 ("verify", cmd_verify, "check a container's synthesis hash")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--input", required=True)
        c.add_argument("--weights", required=True)
        if name != "verify":
            c.add_argument("--out", required=True)
        if name == "encode":
            c.add_argument("--q", type=int, default=1)
            c.add_argument("--no-enhance", action="store_true", help="bypass SMapNet (ablation)")
            c.add_argument("--embed-synth-hash", action="store_true")
        c.set_defaults(func=func)

    for name, func in (("eval", cmd_eval), ("rd-curve", cmd_rd_curve)):
        e = sub.add_parser(name, help="per-image CSV" if name == "eval" else "mean RD points as CSV")
        e.add_argument("--data", required=True)
        e.add_argument("--weights", required=True)
        e.add_argument("--q-list", type=_q_list, default=[1, 2, 4, 8, 16, 32])
        e.add_argument("--variants", type=_variants, default=["with-enhancement"],
                       help="with, without, both, or a comma list")
        e.add_argument("--csv", required=True)
        e.add_argument("--workers", type=int, default=1)
        e.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "q", 1) is not None and not 1 <= getattr(args, "q", 1) <= 64:
        parser.error("--q must be in [1, 64]")
    try:
        return args.func(args)
    except SynthesisMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FormatError, MissingWeightsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
