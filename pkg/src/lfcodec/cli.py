"""Command-line entry point: ``lfcodec {encode,decode,evaluate,train,rdsweep,selftest,synth}``.

Exit codes: 0 success, 1 self-test failure or unexpected error, 2 bad
arguments, 3 I/O problems, 4 shape or format errors, 5 decode or integrity
errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from lfcodec import __version__
from lfcodec.errors import DecodeError, LFCodecError, MetricError

EXIT_OK, EXIT_FAIL, EXIT_ARGS, EXIT_IO, EXIT_FORMAT, EXIT_DECODE = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _threads():
    raw = os.environ.get("LFCODEC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"LFCODEC_THREADS must be an integer, got {raw!r}") from None


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _read_config(path):
    """``key = value`` lines; keys use the long flag names with dashes or underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = val.strip().strip('"')
    return out


def _load_model(path):
    from lfcodec.train import load_model

    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_model(path)


def _check_requested(cfg, args):
    """Flags given on the command line must agree with the checkpoint's configuration."""
    if args.ablate and sorted(args.ablate) != sorted(cfg.ablations):
        raise UsageError(f"--ablate {args.ablate} disagrees with checkpoint ablations {cfg.ablations}")
    if getattr(args, "lambda_", None) is not None and abs(args.lambda_ - cfg.lam) > 1e-15:
        raise UsageError(f"--lambda {args.lambda_} disagrees with checkpoint lambda {cfg.lam}")


def _layout_of(path, layout):
    if layout:
        return layout
    return "sai" if Path(path).is_dir() else "macpi"


def _read_input(path, layout, manifest=None):
    from lfcodec import lfio

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if layout == "sai":
        if not path.is_dir():
            raise UsageError("--layout sai expects a directory of view_<u>_<v> images")
        return lfio.read_sai_dir(path)
    if path.is_dir():
        raise UsageError("--layout macpi expects an image file")
    return lfio.read_macpi(path, manifest)


# subcommands ------------------------------------------------------------------------

def cmd_encode(args):
    from lfcodec.codec.api import encode_lf

    model, meta, h = _load_model(args.checkpoint)
    _check_requested(model.cfg, args)
    layout = _layout_of(args.input, args.layout)
    lf = _read_input(args.input, layout, args.manifest)
    res = encode_lf(lf, model, h, layout=layout)
    Path(args.output).write_bytes(res.data)
    report = res.report()
    report.update({"input": str(args.input), "output": str(args.output), "layout": layout,
                   "model_hash": f"{h:016x}", "ablations": model.cfg.ablations, "lambda": model.cfg.lam})
    _emit(report, args.report)
    return EXIT_OK


def cmd_decode(args):
    from lfcodec import lfio
    from lfcodec.codec.api import decode_lf
    from lfcodec.metrics import bpp, psnr

    data = Path(args.input).read_bytes()
    model, meta, h = _load_model(args.checkpoint)
    dec = decode_lf(data, model, h)
    layout = args.layout or dec.header.layout
    suffix = ".npy" if args.lossless_output else ".png"
    if layout == "sai":
        lfio.write_sai_dir(args.output, dec.lf, suffix)
    else:
        out = Path(args.output)
        if args.lossless_output:
            out = out.with_suffix(".npy")
        lfio.write_macpi(out, dec.lf)
    report = {"input": str(args.input), "output": str(args.output), "layout": layout,
              "bpp": bpp(data), "A": dec.header.A, "H": dec.header.H, "W": dec.header.W}
    if args.reference:
        ref = _read_input(args.reference, _layout_of(args.reference, None))
        q = psnr(ref.samples, dec.lf.samples, peak=ref.value_range[1] - ref.value_range[0], luma=args.luma)
        report["psnr"] = q.db
        report["lossless"] = q.lossless
    _emit(report, args.report)
    return EXIT_OK


def _eval_job(job):
    from lfcodec.evaluate import evaluate_model

    ckpt, label, lf = job
    model, _, h = _load_model(ckpt)
    return evaluate_model(model, h, [lf], [label])[0]


def _inputs(args):
    """Light fields from ``--input`` paths, or a synthetic set when ``--synthetic N`` is given."""
    if args.synthetic:
        from lfcodec.train import synth_dataset

        lfs = synth_dataset(args.synthetic, args.A, args.size, args.size, seed=args.seed)
        return [f"synth{i:02d}" for i in range(len(lfs))], lfs
    if not args.input:
        raise UsageError("give --input paths or --synthetic N")
    labels, lfs = [], []
    for p in args.input:
        labels.append(Path(p).stem)
        lfs.append(_read_input(p, _layout_of(p, args.layout)))
    return labels, lfs


def _run_jobs(jobs):
    workers = min(_threads(), len(jobs)) or 1
    if workers == 1:
        return [_eval_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_eval_job, jobs))


def cmd_evaluate(args):
    labels, lfs = _inputs(args)
    recs = _run_jobs([(args.checkpoint, lab, lf) for lab, lf in zip(labels, lfs)])
    rows = [{"label": r.label, "bpp": r.bpp, "psnr": r.psnr, "estimated_bpp": r.estimated_bpp,
             "latents_exact": r.latents_exact} for r in recs]
    report = {"checkpoint": str(args.checkpoint), "images": rows,
              "mean_bpp": float(np.mean([r.bpp for r in recs]))}
    quals = [r.psnr for r in recs if r.psnr is not None]
    report["mean_psnr"] = float(np.mean(quals)) if quals else None
    _emit(report, args.report)
    return EXIT_OK


def cmd_train(args):
    from lfcodec.codec.model import CodecConfig
    from lfcodec.plotting import plot_loss_trace
    from lfcodec.train import synth_dataset, train_toy

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = CodecConfig.toy if args.preset == "toy" else (CodecConfig.tiny if args.preset == "tiny" else CodecConfig)
    kw = {"seed": args.seed, "lambda_index": args.lambda_index}
    if args.lambda_ is not None:
        kw["lmbda"] = args.lambda_
    if args.preset == "full":
        kw.update(A=args.A, channels=1)
    cfg = base(**kw).with_ablations(args.ablate or [])
    data = synth_dataset(args.dataset_size, cfg.A, args.size, args.size, seed=args.seed)
    stem = args.name or f"lambda{cfg.lam:g}"
    res = train_toy(cfg, data, args.steps, batch_size=args.batch_size, lr=args.lr,
                    trace_path=out / f"{stem}.csv", checkpoint_path=out / f"{stem}.lft",
                    log=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    plot_loss_trace(res.trace, out / f"{stem}_loss.png", title=f"lambda = {cfg.lam:g}")
    _emit({"checkpoint": str(out / f"{stem}.lft"), "trace": str(out / f"{stem}.csv"),
           "figure": str(out / f"{stem}_loss.png"), "model_hash": f"{res.model_hash:016x}",
           "loss_drop": res.loss_drop(), "final_J": res.trace[-1]["J"], "seconds": res.seconds}, args.report)
    return EXIT_OK


def cmd_rdsweep(args):
    from lfcodec import metrics
    from lfcodec.plotting import plot_rd_curves

    if args.proposed:
        rows = metrics.read_rd_csv(args.proposed)
    else:
        ckpts = list(args.checkpoint)
        for c in ckpts:
            if not Path(c).is_file():
                raise FileNotFoundError(f"checkpoint not found: {c}")
        labels, lfs = _inputs(args)
        jobs = [(c, lab, lf) for c in ckpts for lab, lf in zip(labels, lfs)]
        rows = [(r.label, r.bpp, r.psnr) for r in _run_jobs(jobs)]
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_rd_csv(out / "rd.csv", rows)
    by_label = {}
    for lab, rate, q in rows:
        if q is not None:
            by_label.setdefault(lab, ([], []))
            by_label[lab][0].append(rate)
            by_label[lab][1].append(q)
    baselines = {}
    for spec in args.baseline or []:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        baselines[name] = metrics.curves_from_rows(metrics.read_rd_csv(path))
    report = {"rd_csv": str(out / "rd.csv"), "points": len(rows)}
    if baselines:
        proposed = metrics.curves_from_rows(rows)
        entries = metrics.bd_table(proposed, baselines)
        metrics.write_bd_csv(out / "bd.csv", entries)
        table = metrics.format_bd_table(entries)
        (out / "bd.txt").write_text(table)
        print(table, file=sys.stderr)
        report.update({"bd_csv": str(out / "bd.csv"), "bd_table": str(out / "bd.txt")})
    base_pts = {f"{n}:{lab}": (c.bpp, c.psnr) for n, cs in baselines.items() for lab, c in cs.items()}
    plot_rd_curves(by_label, out / "rd.png", baselines=base_pts)
    report["figure"] = str(out / "rd.png")
    _emit(report, args.report)
    return EXIT_OK


def cmd_selftest(args):
    from lfcodec.nd.conv import set_fault
    from lfcodec.selftest import SUITES, run_selftest

    np.random.seed(args.seed)
    for fault in args.inject_fault or []:
        set_fault(fault)
    try:
        results = run_selftest(args.suite or list(SUITES))
    finally:
        for fault in args.inject_fault or []:
            set_fault(fault, False)
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'}  {sum(r.passed for r in results)}/{len(results)} suites, "
          f"{sum(r.seconds for r in results):.1f} s")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(args):
    from lfcodec import lfio
    from lfcodec.train import synth_dataset

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, lf in enumerate(synth_dataset(args.count, args.A, args.size, args.size, args.seed, args.channels)):
        target = out / (f"lf{i:02d}" + ("" if args.layout == "sai" else ".png"))
        lfio.write_lf(target, lf, args.layout, suffix=".png")
        written.append(str(target))
    _emit({"written": written})
    return EXIT_OK


# parser ---------------------------------------------------------------------------------

def build_parser():
    from lfcodec.codec.model import ABLATIONS

    p = argparse.ArgumentParser(prog="lfcodec", description="Learned light-field image codec.")
    p.add_argument("--version", action="version", version=f"lfcodec {__version__}")
    p.add_argument("--config", help="optional key = value file; command-line flags win")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="LFT1 checkpoint")
        sp.add_argument("--report", help="write the JSON report here instead of stdout")
        sp.add_argument("--seed", type=int, default=0)

    def model_flags(sp):
        sp.add_argument("--lambda", dest="lambda_", type=float, metavar="LAMBDA", help="custom lambda instead of the ladder")
        sp.add_argument("--ablate", action="append", choices=ABLATIONS, help="ablation flag (repeatable)")

    def inputs(sp):
        sp.add_argument("--input", nargs="+", help="SAI directories or MacPI images")
        sp.add_argument("--layout", choices=("sai", "macpi"))
        sp.add_argument("--synthetic", type=int, default=0, help="use N synthetic light fields instead")
        sp.add_argument("--A", type=int, default=2)
        sp.add_argument("--size", type=int, default=32)

    sp = sub.add_parser("encode", help="light field -> bitstream")
    common(sp)
    model_flags(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--layout", choices=("sai", "macpi"))
    sp.add_argument("--manifest", help="MacPI manifest (default: <image>.manifest)")
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="bitstream -> light field")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--layout", choices=("sai", "macpi"), help="default: the layout recorded at encode time")
    sp.add_argument("--reference", help="original light field; adds PSNR to the report")
    sp.add_argument("--luma", action="store_true", help="PSNR on BT.601 luma")
    sp.add_argument("--lossless-output", action="store_true", help="write .npy instead of 8-bit PNG")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("evaluate", help="rate and PSNR of one checkpoint on a set of light fields")
    common(sp)
    inputs(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("train", help="toy rate-distortion training on synthetic light fields")
    common(sp, checkpoint=False)
    model_flags(sp)
    sp.add_argument("--lambda-index", type=int, default=0)
    sp.add_argument("--preset", choices=("toy", "tiny", "full"), default="toy")
    sp.add_argument("--A", type=int, default=2)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--dataset-size", type=int, default=16)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--name")
    sp.add_argument("--output-dir", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("rdsweep", help="RD points for several checkpoints (or an RD log) plus a BD table against baselines")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", nargs="+", help="one checkpoint per lambda")
    src.add_argument("--proposed", help="existing rd.csv of the proposed codec instead of checkpoints")
    sp.add_argument("--report")
    sp.add_argument("--seed", type=int, default=0)
    inputs(sp)
    sp.add_argument("--baseline", action="append", help="NAME=rd.csv of a reference codec (repeatable)")
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_rdsweep)

    sp = sub.add_parser("selftest", help="run the oracle suites")
    sp.add_argument("--suite", action="append", help="run only these suites")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("synth", help="write synthetic light fields to disk")
    sp.add_argument("--count", type=int, default=4)
    sp.add_argument("--A", type=int, default=2)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--channels", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--layout", choices=("sai", "macpi"), default="sai")
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_synth)
    return p


def _apply_config(parser, argv):
    """Config-file values become subcommand defaults, so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub_parser = choices[command]
    dests = {a.dest: a for a in sub_parser._actions}
    defaults = {}
    for key, raw in _read_config(known.config).items():
        key = "lambda_" if key == "lambda" else key
        if key not in dests or key == "help":
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = dests[key]
        try:
            if action.nargs in ("+", "*") or isinstance(action, argparse._AppendAction):
                defaults[key] = raw.split()
            elif isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes")
            elif action.type is not None:
                defaults[key] = action.type(raw)
            else:
                defaults[key] = raw
        except ValueError:
            raise UsageError(f"config key {key!r}: bad value {raw!r}") from None
        if action.choices is not None:
            vals = defaults[key] if isinstance(defaults[key], list) else [defaults[key]]
            bad = [v for v in vals if v not in action.choices]
            if bad:
                raise UsageError(f"config key {key!r}: invalid choice(s) {bad}")
    sub_parser.set_defaults(**defaults)
    for a in sub_parser._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_ARGS
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LFCodecError, MetricError, ValueError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
