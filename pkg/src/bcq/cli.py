"""Command-line entry point.

Subcommands: calibrate, freeze, encode, decode, eval, sweep, fit-lloydmax,
info.  Exit codes: 0 ok, 2 usage/validation error, 3 input data error,
4 family mismatch, 5 corrupt stream.  All randomness flows from --seed
through named substreams, and --threads never changes output bytes.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import nmse
from .calibrate import (
    QuantConfig,
    calibrate,
    freeze_family,
    load_family,
    normalize_blocks,
    save_family,
)
from .codec import (
    decode,
    effective_bitwidth,
    encode,
    read_stream,
    write_stream,
)
from .errors import BcqError, DataError, ValidationError
from .formats import compute_scale, parse_format, quantize_rtn
from .harness import emit_report, emit_sweep, parse_experiment, run_experiment, sweep_configs
from .lloydmax import lloyd_max_best
from .rng import substream
from .tensor_io import load_tensor, parse_dist, save_tensor, synth_tensor

log = logging.getLogger("bcq")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    common.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("BCQ_THREADS", "1")),
        help="worker hint; changes wall time only, never output bytes",
    )
    common.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )
    return common


def _check_common(parser, args):
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _resolve_tensor(parser, arg: str, size: int, seed: int):
    """Load a BCQT file, or synthesize from "synth:<dist-spec>"."""
    if arg.startswith("synth:"):
        try:
            dist = parse_dist(arg[len("synth:"):])
        except ValidationError as e:
            parser.error(str(e))
        return synth_tensor(dist, size, seed)
    try:
        return load_tensor(arg)
    except OSError as e:
        raise DataError(f"cannot read tensor {arg!r}: {e}") from e


def _quant_config(parser, args) -> QuantConfig:
    nc = args.Nc
    if nc < 1 or nc & (nc - 1) != 0:
        parser.error("--Nc must be a power of two")
    if args.La % args.Lb != 0:
        parser.error("--La must be a multiple of --Lb")
    if not 1 <= args.bits <= 6:
        parser.error("--bits must be in 1..6")
    if args.iters < 1:
        parser.error("--iters must be at least 1")
    return QuantConfig(
        block_len=args.Lb,
        array_len=args.La,
        num_codebooks=nc,
        bits=args.bits,
        max_iters=args.iters,
        seed=args.seed,
    )


# --- subcommands ------------------------------------------------------------

def cmd_calibrate(parser, args) -> int:
    cfg = _quant_config(parser, args)
    chunks = []
    for inp in args.input:
        t = _resolve_tensor(parser, inp, args.calib_size, args.seed)
        chunks.append(normalize_blocks(t, cfg).calib_blocks)
    blocks = np.concatenate(chunks, axis=0)
    if args.sample_blocks is not None and args.sample_blocks < blocks.shape[0]:
        rng = substream(args.seed, "block-sample")
        keep = np.sort(rng.permutation(blocks.shape[0])[: args.sample_blocks])
        blocks = blocks[keep]
    family, trace = calibrate(blocks, cfg, init=args.init)
    if not args.no_freeze:
        family = freeze_family(family)
    save_family(family, args.out_family)
    trace_path = args.trace or args.out_family + ".trace.json"
    Path(trace_path).write_text(json.dumps(trace.to_dict(), indent=2) + "\n")
    final = trace.mse_per_iteration[-1] if trace.mse_per_iteration else float("nan")
    print(
        f"calibrated {family.num_codebooks} codebooks x {2**family.bits} entries "
        f"in {trace.iterations} iterations (final MSE {final:.6g}, "
        f"converged={trace.converged}) -> {args.out_family}"
    )
    return 0


def cmd_freeze(parser, args) -> int:
    family = load_family(args.family)
    save_family(freeze_family(family), args.out)
    print(f"froze {args.family} -> {args.out}")
    return 0


def cmd_encode(parser, args) -> int:
    family = load_family(args.family)
    if not family.frozen:
        raise ValidationError(f"{args.family} is not frozen; run `bcq freeze` first")
    t = _resolve_tensor(parser, args.input, args.size, args.seed)
    cfg = QuantConfig(
        block_len=family.block_len,
        array_len=args.La,
        num_codebooks=family.num_codebooks,
        bits=family.bits,
        codeword_bits=family.codeword_bits,
        seed=args.seed,
    )
    enc = encode(t, family, cfg)
    write_stream(enc, args.out)
    bits = enc.payload_bits / enc.padded_len
    print(f"encoded {t.size} scalars -> {args.out} ({bits:.6g} payload bits/scalar)")
    return 0


def cmd_decode(parser, args) -> int:
    enc = read_stream(args.input)
    family = load_family(args.family)
    t = decode(enc, family)
    save_tensor(t, args.out)
    print(f"decoded {t.size} scalars -> {args.out}")
    return 0


def cmd_eval(parser, args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text())
    except OSError as e:
        raise DataError(f"cannot read experiment spec: {e}") from e
    except json.JSONDecodeError as e:
        parser.error(f"bad experiment spec JSON at line {e.lineno} column {e.colno}: {e.msg}")
    exp = parse_experiment(doc)
    report = run_experiment(exp)
    out = Path(args.out or exp.output or "report.csv")
    emit_report(report, out, fmt=args.format)
    written = [str(out)]
    if not args.no_figures:
        from . import plots

        conv = out.with_suffix(".convergence.png")
        if plots.save_convergence_figure(report, conv):
            written.append(str(conv))
        bars = out.with_suffix(".nmse.png")
        if plots.save_nmse_figure(report, bars):
            written.append(str(bars))
    for method, med in report.aggregates["median_nmse_by_method"].items():
        print(f"{method}: median NMSE {med:.6g}")
    print("wrote " + ", ".join(written))
    return 0


def cmd_sweep(parser, args) -> int:
    for nc in args.Nc:
        if nc < 1 or nc & (nc - 1) != 0:
            parser.error("--Nc entries must be powers of two")
    t = _resolve_tensor(parser, args.input, args.size, args.seed)
    cells = sweep_configs(
        t, args.Lb, args.La, args.Nc, bits=args.bits, seed=args.seed, max_iters=args.iters
    )
    out = Path(args.out)
    emit_sweep(cells, out, fmt=args.format)
    if not args.no_figures:
        from . import plots

        plots.save_sweep_figure(cells, out.with_suffix(".sweep.png"))
    for c in cells:
        print(
            f"Lb={c.block_len} La={c.array_len} Nc={c.num_codebooks}: "
            f"{float(c.bits_per_scalar):.6g} bits, NMSE {c.nmse:.6g}"
        )
    return 0


def cmd_fit_lloydmax(parser, args) -> int:
    t = _resolve_tensor(parser, args.input, args.size, args.seed)
    res = lloyd_max_best(
        t.data, args.bits, restarts=args.restarts, seed=args.seed,
        max_iters=args.iters, tol=args.tol,
    )
    print(f"lloyd-max {args.bits}-bit: MSE {res.mse:.6g} ({res.iterations} iterations)")
    data = t.data.astype(np.float64)
    for name in args.compare_format or []:
        fmt = parse_format(name)
        recon = quantize_rtn(data, fmt, compute_scale(data, fmt))
        mse = float(np.mean((data - recon) ** 2))
        print(f"{fmt}: MSE {mse:.6g}")
    if args.out:
        doc = {
            "bits": args.bits,
            "levels": [float(v) for v in res.levels],
            "mse": res.mse,
            "iterations": res.iterations,
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        print(f"wrote levels to {args.out}")
    return 0


def cmd_info(parser, args) -> int:
    path = Path(args.input)
    try:
        head = path.open("rb").read(4)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if head == b"BCQT":
        t = load_tensor(path)
        data = t.data.astype(np.float64)
        print(f"BCQT tensor {t.name}: shape {list(t.shape)}, {t.size} scalars")
        print(
            f"min {data.min():.6g}  max {data.max():.6g}  "
            f"mean {data.mean():.6g}  std {data.std():.6g}"
        )
    elif head == b"BCQC":
        enc = read_stream(path)
        cfg = enc.cfg
        rep = effective_bitwidth(cfg, total_scalars=enc.padded_len)
        print(
            f"BCQC stream: shape {list(enc.shape)}, pad {enc.pad}, "
            f"Lb={cfg.block_len} La={cfg.array_len} Nc={cfg.num_codebooks} B={cfg.bits}"
        )
        print(f"family hash {enc.family_hash:016x}, tensor scale {enc.tensor_scale:.6g}")
        print(
            f"payload {enc.payload_bits} bits "
            f"({enc.payload_bits / enc.padded_len:.6g} bits/scalar; "
            f"formula {float(rep.effective_bits_per_scalar):.6g})"
        )
    else:
        family = load_family(path)
        print(
            f"codebook family: Nc={family.num_codebooks} B={family.bits} "
            f"Bc={family.codeword_bits} Lb={family.block_len} frozen={family.frozen}"
        )
        print(f"payload {family.payload_bytes:.6g} bytes, hash {family.content_hash():016x}")
    return 0


# --- parser wiring ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcq",
        description="Block clustered quantization: calibrate codebooks, encode/decode "
        "streams, and compare quantizers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit a codebook family")
    p.add_argument("--input", action="append", required=True,
                   help="BCQT path or synth:<dist>; repeatable")
    p.add_argument("--Lb", type=int, default=8, help="block length")
    p.add_argument("--La", type=int, default=64, help="block array length")
    p.add_argument("--Nc", type=int, default=16, help="number of codebooks (power of two)")
    p.add_argument("--bits", type=int, default=4, help="scalar index bits")
    p.add_argument("--iters", type=int, default=100, help="max calibration iterations")
    p.add_argument("--calib-size", type=int, default=2**20,
                   help="scalars per synthetic calibration input")
    p.add_argument("--sample-blocks", type=int, default=None,
                   help="subsample the calibration set to this many blocks")
    p.add_argument("--init", choices=["kmeans++", "random"], default="kmeans++")
    p.add_argument("--no-freeze", action="store_true",
                   help="keep real-valued codewords instead of 6-bit integers")
    p.add_argument("--trace", default=None, help="trace sidecar path")
    p.add_argument("--out-family", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("freeze", parents=[common],
                       help="round a family's codewords to integers")
    p.add_argument("--family", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_freeze)

    p = sub.add_parser("encode", parents=[common], help="encode a tensor to a BCQC stream")
    p.add_argument("--input", required=True, help="BCQT path or synth:<dist>")
    p.add_argument("--family", required=True)
    p.add_argument("--La", type=int, default=64, help="block array length")
    p.add_argument("--size", type=int, default=2**16, help="scalars for synth inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decode a BCQC stream")
    p.add_argument("--input", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="run an experiment spec")
    p.add_argument("--spec", required=True, help="experiment JSON")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="csv")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="bitwidth/NMSE over a config grid")
    p.add_argument("--input", default="synth:gaussian-with-outliers(1,0.01,10)")
    p.add_argument("--size", type=int, default=2**16, help="scalars for synth inputs")
    p.add_argument("--Lb", type=int, nargs="+", default=[8])
    p.add_argument("--La", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--Nc", type=int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="csv")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-lloydmax", parents=[common],
                       help="fit an optimal scalar quantizer to a tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--size", type=int, default=2**16, help="scalars for synth inputs")
    p.add_argument("--compare-format", action="append",
                   help="also report the MSE of a named format; repeatable")
    p.add_argument("--out", default=None, help="write fitted levels as JSON")
    p.set_defaults(func=cmd_fit_lloydmax)

    p = sub.add_parser("info", parents=[common],
                       help="describe a BCQT tensor, BCQC stream, or family JSON")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_common(parser, args)
    try:
        return args.func(parser, args)
    except BcqError as e:
        print(f"bcq {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
