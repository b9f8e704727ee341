"""``esdnet`` command line: synth, train, infer, eval, gradcheck, bench.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure. Every failure
prints one ``esdnet: error: ...`` line on stderr and leaves no partial output.
"""

import argparse
import logging
import os
import resource
import shutil
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from . import gradsuite
from .config import ConfigError, load_config
from .errors import ContractError, FormatError, NaNError
from .io import load_png, load_weights, save_png, save_weights, write_csv
from .loss import make_extractor
from .model import ModelConfig, build_model, tiled_infer
from .synth import MoireParams, apply_degradation, gen_clean, gen_dataset
from .train import LOG_FIELDS, evaluate, train

logger = logging.getLogger("esdnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.txt"
REPORT_FIELDS = ("index", "name", "psnr", "ssim", "input_psnr", "input_ssim")
BENCH_FIELDS = ("run", "seconds", "height", "width", "tile", "overlap", "peak_rss_mb")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_hw(text):
    """``"3840x2160"`` -> ``(2160, 3840)`` (width x height in, height, width out)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _manifest_line(index, params):
    fields = [f"index={index}", f"clean={index:04d}_clean.png", f"moire={index:04d}_moire.png"]
    fields += [f"moire.{k}={_fmt(v)}" for k, v in params.to_dict().items()]
    return " ".join(fields)


def read_manifest(data_dir):
    """Return ``[(name, clean_path, moire_path), ...]`` from a synth directory."""
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.isfile(path):
        raise FormatError(f"{data_dir}: no {MANIFEST}; expected a directory written by `esdnet synth`")
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            entry = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
            if "clean" not in entry or "moire" not in entry:
                raise FormatError(f"{path}:{lineno}: missing clean= or moire= field")
            pairs.append((entry["clean"], os.path.join(data_dir, entry["clean"]),
                          os.path.join(data_dir, entry["moire"])))
    if not pairs:
        raise FormatError(f"{path}: manifest lists no pairs")
    return pairs


def load_pairs(data_dir):
    out = []
    for name, clean_path, moire_path in read_manifest(data_dir):
        clean, moire = load_png(clean_path), load_png(moire_path)
        if clean.shape != moire.shape:
            raise FormatError(f"{name}: clean {clean.shape} and moire {moire.shape} differ in size")
        out.append((clean, moire))
    return out


def _run_config(args):
    return load_config(getattr(args, "config", None), args.set or ())


def _check_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FormatError(f"output directory {parent} does not exist")


# -- commands ----------------------------------------------------------------

def cmd_synth(args):
    h, w = args.hw
    cfg = _run_config(args)
    out = os.path.abspath(args.out)
    if os.path.exists(out) and (not os.path.isdir(out) or os.listdir(out)):
        raise FormatError(f"{out} already exists and is not an empty directory")
    _check_parent(out)
    if cfg.moire is not None:
        # fixed degradation for every pair, clean content still varies with the seed
        base = gen_dataset(args.n, h, w, seed=args.seed)
        data = [(c, apply_degradation(c, cfg.moire), cfg.moire) for c, _, _ in base]
    else:
        data = gen_dataset(args.n, h, w, seed=args.seed)
    tmp = tempfile.mkdtemp(dir=os.path.dirname(out), prefix=".tmp-synth-")
    try:
        lines = []
        for k, (clean, moire, params) in enumerate(data):
            save_png(clean, os.path.join(tmp, f"{k:04d}_clean.png"))
            save_png(moire, os.path.join(tmp, f"{k:04d}_moire.png"))
            lines.append(_manifest_line(k, params))
        with open(os.path.join(tmp, MANIFEST), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        if os.path.isdir(out):
            os.rmdir(out)
        os.rename(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"wrote {len(data)} pairs to {out}")


def cmd_train(args):
    cfg = _run_config(args)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    log_path = args.log or os.path.splitext(args.out_weights)[0] + ".loss.csv"
    _check_parent(args.out_weights)
    _check_parent(log_path)
    pairs = load_pairs(args.data)
    model = build_model(cfg.model, seed=cfg.train.seed)
    ext = make_extractor(cfg.loss) if cfg.loss.lam > 0 else None
    t0 = time.perf_counter()
    try:
        model, log = train(model, pairs, cfg.train, cfg.loss, ext)
    except NaNError as exc:
        raise NumericFailure(str(exc)) from None
    save_weights(model, args.out_weights)
    write_csv(log, log_path, LOG_FIELDS)
    print(f"trained {len(log)} steps in {time.perf_counter() - t0:.1f}s; "
          f"final loss {log[-1]['loss']:.5f}; weights {args.out_weights}; log {log_path}")


def cmd_infer(args):
    model = load_weights(args.weights)
    img = load_png(args.input)
    _check_parent(args.out)
    out = tiled_infer(model, img, tile=args.tile, overlap=args.overlap)
    if not np.all(np.isfinite(out)):
        raise NumericFailure("restored image contains non-finite values")
    save_png(np.clip(out, 0, 1), args.out)
    print(f"restored {img.shape[2]}x{img.shape[1]} image to {args.out}")


def cmd_eval(args):
    model = load_weights(args.weights)
    names = [name for name, _, _ in read_manifest(args.data)]
    pairs = load_pairs(args.data)
    _check_parent(args.report)
    report = evaluate(model, pairs)
    rows = [dict(row, name=name) for row, name in zip(report["rows"], names)]
    rows.append({"index": "mean", "name": "", **{k: report[k] for k in REPORT_FIELDS[2:]}})
    write_csv(rows, args.report, REPORT_FIELDS)
    print(f"{len(pairs)} pairs: PSNR {report['psnr']:.2f} dB (input {report['input_psnr']:.2f}), "
          f"SSIM {report['ssim']:.4f} (input {report['input_ssim']:.4f}); report {args.report}")


def cmd_gradcheck(args):
    failed = 0
    for r in gradsuite.run(include_blocks=not args.quick):
        status = "ok" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status:4s} {r.name:20s} rel_err={r.error:.3e} tol={r.tol:.0e} ({r.seconds:.2f}s)")
    if failed:
        raise NumericFailure(f"{failed} gradient check(s) exceeded tolerance")


def bench(model, h, w, runs=3, tile=512, overlap=64, seed=0):
    """Time ``tiled_infer`` on one synthetic h x w frame; returns per-run rows."""
    clean = gen_clean("mixed", h, w, seed=seed)
    frame = apply_degradation(clean, MoireParams(amplitudes=(0.3, 0.25, 0.35), freq=(0.11, 0.07),
                                                 phases=(0.0, 2.1, 4.2)))
    rows = []
    for k in range(runs):
        t0 = time.perf_counter()
        out = tiled_infer(model, frame, tile=tile, overlap=overlap)
        dt = time.perf_counter() - t0
        if out.shape != frame.shape or not np.all(np.isfinite(out)):
            raise NumericFailure("benchmark output is malformed or non-finite")
        rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
        rows.append({"run": k, "seconds": dt, "height": h, "width": w, "tile": tile,
                     "overlap": overlap, "peak_rss_mb": rss})
    return rows


def summarize(rows):
    secs = np.array([r["seconds"] for r in rows])
    median = float(np.median(secs))
    return {"median": median, "p95": float(np.percentile(secs, 95)), "fps": 1.0 / median}


def cmd_bench(args):
    h, w = args.hw
    if args.weights:
        model = load_weights(args.weights)
    else:
        model = build_model(ModelConfig(width_div=args.width_div), seed=args.seed)
    _check_parent(args.csv)
    rows = bench(model, h, w, args.runs, args.tile, args.overlap, args.seed)
    s = summarize(rows)
    summary = [{"run": key, "seconds": s[key], "height": h, "width": w, "tile": args.tile,
                "overlap": args.overlap, "peak_rss_mb": rows[-1]["peak_rss_mb"]} for key in ("median", "p95")]
    write_csv(rows + summary, args.csv, BENCH_FIELDS)
    print(f"{w}x{h}: median {s['median'] * 1000:.0f} ms/frame, p95 {s['p95'] * 1000:.0f} ms, "
          f"{s['fps']:.3f} fps, peak RSS {rows[-1]['peak_rss_mb']:.0f} MB; csv {args.csv}")


# -- parser ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="esdnet", description="Moire removal with ESDNet on numpy.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_config(sp):
        sp.add_argument("--config", help="key=value run configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    sp = sub.add_parser("synth", help="write synthetic clean/moire PNG pairs and a manifest")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--hw", type=parse_hw, default=(64, 64), help="WIDTHxHEIGHT (default 64x64)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    add_config(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model on a synth directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-weights", required=True)
    sp.add_argument("--log", help="loss CSV path (default: next to the weights)")
    sp.add_argument("--seed", type=int)
    add_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="restore one PNG with tiled inference")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tile", type=int, default=512)
    sp.add_argument("--overlap", type=int, default=64)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="PSNR/SSIM report over a synth directory")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--quick", action="store_true", help="primitives only")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("bench", help="time tiled inference on a synthetic frame")
    sp.add_argument("--weights", help="weights file (default: random model)")
    sp.add_argument("--width-div", type=int, default=1, choices=(1, 2, 4, 8))
    sp.add_argument("--hw", type=parse_hw, default=(2160, 3840), help="WIDTHxHEIGHT (default 3840x2160)")
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--tile", type=int, default=512)
    sp.add_argument("--overlap", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", default="bench.csv")
    sp.set_defaults(func=cmd_bench)
    return p


def _validate(args):
    for name in ("n", "runs"):
        if getattr(args, name, 1) < 1:
            raise UsageError(f"--{name} must be at least 1")
    for name in ("data", "weights", "input", "config"):
        path = getattr(args, name, None)
        if path and not os.path.exists(path):
            raise FormatError(f"{path}: no such file or directory")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
    except UsageError as exc:
        print(f"esdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"esdnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (NumericFailure, NaNError, FloatingPointError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except (FormatError, ContractError, OSError) as exc:
        code, msg = EXIT_DATA, str(exc)
    else:
        return EXIT_OK
    print(f"esdnet: error: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
