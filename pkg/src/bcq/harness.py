"""Experiment driver: quantization-error comparisons across methods.

An experiment is a cross product of tensor sources, methods and seeds.  Each
row records NMSE, exact bits-per-scalar accounting, measured stream size and
the calibration trace where one exists.  Calibration is either "universal"
(one family per seed, fitted on a designated calibration source and applied
to every tensor) or "layerwise" (one family per tensor).
"""

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .baselines import BaselineSpec, nmse, parse_baseline, quantize_baseline
from .calibrate import (
    QuantConfig,
    _nearest,
    calibrate_tensor,
    freeze_family,
    map_blocks,
    normalize_blocks,
)
from .codec import decode, dump_stream, effective_bitwidth, encode
from .errors import ValidationError
from .formats import compute_scale, parse_format, quantize_rtn
from .lloydmax import assign, lloyd_max
from .tensor_io import TensorView, load_tensor, parse_dist, synth_tensor

log = logging.getLogger(__name__)

DEFAULT_CALIB_DIST = "mixture()"
DEFAULT_CALIB_SIZE = 2**20


@dataclass(frozen=True)
class TensorSource:
    """A dataset entry: a BCQT file or a synthetic spec."""

    name: str
    path: str = None
    dist: str = None
    n: int = None
    seed: int = None  # fixed data seed; default follows the row seed

    def resolve(self, row_seed: int) -> TensorView:
        if self.path is not None:
            t = load_tensor(self.path)
            return TensorView(data=t.data, shape=t.shape, name=self.name)
        data_seed = self.seed if self.seed is not None else row_seed
        t = synth_tensor(self.dist, self.n, data_seed)
        return TensorView(data=t.data, shape=t.shape, name=self.name)


@dataclass
class Experiment:
    sources: list
    methods: list
    calibration_mode: str = "layerwise"
    seeds: tuple = (0,)
    calib_dist: str = DEFAULT_CALIB_DIST
    calib_size: int = DEFAULT_CALIB_SIZE
    sample_blocks: int = None
    output: str = None

    def __post_init__(self):
        if not self.sources or not self.methods:
            raise ValidationError("experiment needs at least one source and one method")
        if self.calibration_mode not in ("universal", "layerwise"):
            raise ValidationError("calibration_mode must be universal or layerwise")
        if not self.seeds:
            raise ValidationError("experiment needs at least one seed")


def parse_experiment(doc: dict) -> Experiment:
    """Build an Experiment from its JSON document form."""
    try:
        entries = doc["dataset"]
        methods = list(doc["methods"])
    except (KeyError, TypeError) as e:
        raise ValidationError(f"experiment spec missing field: {e}") from e
    sources = []
    for i, entry in enumerate(entries):
        name = entry.get("name") or entry.get("path") or f"tensor{i}"
        if "path" in entry:
            sources.append(TensorSource(name=name, path=entry["path"]))
        elif "synth" in entry:
            parse_dist(entry["synth"])  # validate early
            sources.append(
                TensorSource(
                    name=name,
                    dist=entry["synth"],
                    n=int(entry.get("n", 2**16)),
                    seed=entry.get("seed"),
                )
            )
        else:
            raise ValidationError(f"dataset entry {i} needs a 'path' or 'synth' field")
    calib = doc.get("calibration", {})
    return Experiment(
        sources=sources,
        methods=methods,
        calibration_mode=doc.get("calibration_mode", "layerwise"),
        seeds=tuple(doc.get("seeds", [0])),
        calib_dist=calib.get("synth", DEFAULT_CALIB_DIST),
        calib_size=int(calib.get("n", DEFAULT_CALIB_SIZE)),
        sample_blocks=doc.get("sample_blocks"),
        output=doc.get("output"),
    )


# --- methods ---------------------------------------------------------------

@dataclass(frozen=True)
class LobcqMethod:
    label: str
    block_len: int
    array_len: int
    num_codebooks: int
    bits: int
    max_iters: int = 100
    freeze: bool = True

    def config(self, seed: int) -> QuantConfig:
        return QuantConfig(
            block_len=self.block_len,
            array_len=self.array_len,
            num_codebooks=self.num_codebooks,
            bits=self.bits,
            max_iters=self.max_iters,
            seed=seed,
        )


@dataclass(frozen=True)
class LloydMaxMethod:
    label: str
    bits: int = 4


@dataclass(frozen=True)
class BaselineMethod:
    label: str
    spec: BaselineSpec


@dataclass(frozen=True)
class FormatMethod:
    label: str
    fmt: object


_LOBCQ_KEYS = {"lb": "block_len", "la": "array_len", "nc": "num_codebooks",
               "b": "bits", "iters": "max_iters", "freeze": "freeze"}


def parse_method(text: str):
    """Resolve a method string.

    Grammar: "lobcq:Lb=8,La=64,Nc=16,B=4[,iters=N][,freeze=0]",
    "lloydmax[:B=4]", a baseline spec name, or a bare format name for
    per-tensor max-scaled rounding.
    """
    s = text.strip()
    low = s.lower()
    if low.startswith("lobcq:"):
        kwargs = {}
        for part in low[len("lobcq:"):].split(","):
            if "=" not in part:
                raise ValidationError(f"bad lobcq parameter {part!r} in {text!r}")
            k, v = part.split("=", 1)
            key = _LOBCQ_KEYS.get(k.strip())
            if key is None:
                raise ValidationError(f"unknown lobcq parameter {k!r} in {text!r}")
            kwargs[key] = int(v)
        for required in ("block_len", "array_len", "num_codebooks", "bits"):
            if required not in kwargs:
                raise ValidationError(f"lobcq method {text!r} is missing {required}")
        kwargs["freeze"] = bool(kwargs.get("freeze", 1))
        return LobcqMethod(label=s, **kwargs)
    if low == "lloydmax" or low.startswith("lloydmax:"):
        bits = 4
        if ":" in low:
            arg = low.split(":", 1)[1]
            if not arg.startswith("b="):
                raise ValidationError(f"bad lloydmax parameter in {text!r}")
            bits = int(arg[2:])
        return LloydMaxMethod(label=s, bits=bits)
    try:
        return BaselineMethod(label=s, spec=parse_baseline(s))
    except ValidationError:
        pass
    return FormatMethod(label=s, fmt=parse_format(s))


# --- report ----------------------------------------------------------------

EVAL_COLUMNS = (
    "tensor", "method", "seed", "nmse", "bits", "bits_exact", "stream_bytes",
    "payload_bits", "calib_iterations", "family_hash", "j_trace",
)


@dataclass
class EvalRow:
    tensor: str
    method: str
    seed: int
    nmse: float
    bits: float
    bits_exact: str
    stream_bytes: int = None
    payload_bits: int = None
    calib_iterations: int = None
    family_hash: str = None
    j_trace: list = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in EVAL_COLUMNS}


@dataclass
class EvalReport:
    rows: list
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "aggregates": self.aggregates}


def _aggregate(rows) -> dict:
    by_method, by_pair = {}, {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r.nmse)
        by_pair.setdefault((r.tensor, r.method), []).append(r.nmse)
    return {
        "median_nmse_by_method": {m: statistics.median(v) for m, v in sorted(by_method.items())},
        "median_nmse_by_tensor_method": {
            f"{t}|{m}": statistics.median(v) for (t, m), v in sorted(by_pair.items())
        },
    }


# --- method runners --------------------------------------------------------

def _lobcq_fake_quant(t: TensorView, family, cfg: QuantConfig) -> TensorView:
    """No-freeze reconstruction through raw array scales (debug/analysis path)."""
    norm = normalize_blocks(t, cfg)
    selectors, _ = map_blocks(norm.blocks, family.books)
    flat = norm.blocks.reshape(-1)
    recon_norm = np.empty_like(flat)
    per_scalar_sel = np.repeat(selectors, cfg.block_len)
    for i in range(family.num_codebooks):
        mask = per_scalar_sel == i
        if not np.any(mask):
            continue
        book = family.books[i]
        recon_norm[mask] = book[_nearest(book, flat[mask])]
    recon = recon_norm / np.repeat(norm.scales, cfg.array_len)
    n = t.size
    return TensorView(data=recon[:n].astype(np.float32), shape=t.shape, name=t.name)


def _run_lobcq(method: LobcqMethod, t: TensorView, seed: int, family, trace) -> EvalRow:
    cfg = method.config(seed)
    report = effective_bitwidth(cfg, total_scalars=t.size)
    if method.freeze:
        frozen = family if family.frozen else freeze_family(family)
        enc = encode(t, frozen, cfg)
        recon = decode(enc, frozen)
        stream = dump_stream(enc)
        stream_bytes, payload_bits = len(stream), enc.payload_bits
        fam_hash = f"{frozen.content_hash():016x}"
    else:
        recon = _lobcq_fake_quant(t, family, cfg)
        stream_bytes, payload_bits = None, None
        fam_hash = f"{family.content_hash():016x}"
    return EvalRow(
        tensor=t.name,
        method=method.label,
        seed=seed,
        nmse=nmse(t, recon),
        bits=float(report.effective_bits_per_scalar),
        bits_exact=str(report.effective_bits_per_scalar),
        stream_bytes=stream_bytes,
        payload_bits=payload_bits,
        calib_iterations=trace.iterations,
        family_hash=fam_hash,
        j_trace=list(trace.mse_per_iteration),
    )


def _run_simple(method, t: TensorView, seed: int) -> EvalRow:
    if isinstance(method, LloydMaxMethod):
        res = lloyd_max(t.data, method.bits)
        idx, _ = assign(t.data, res.levels)
        recon = TensorView(
            data=res.levels[idx].astype(np.float32), shape=t.shape, name=t.name
        )
        bits = Fraction(method.bits)
        extra = {"calib_iterations": res.iterations}
    elif isinstance(method, BaselineMethod):
        recon, rep = quantize_baseline(t, method.spec)
        bits = rep.effective_bits_per_scalar
        extra = {}
    else:
        fmt = method.fmt
        x = t.data.astype(np.float64)
        recon = TensorView(
            data=quantize_rtn(x, fmt, compute_scale(x, fmt)).astype(np.float32),
            shape=t.shape,
            name=t.name,
        )
        bits = Fraction(fmt.bitwidth)
        extra = {}
    return EvalRow(
        tensor=t.name,
        method=method.label,
        seed=seed,
        nmse=nmse(t, recon),
        bits=float(bits),
        bits_exact=str(bits),
        **extra,
    )


def run_experiment(e: Experiment) -> EvalReport:
    """Execute every (tensor, method, seed) cell; deterministic given seeds."""
    methods = [parse_method(m) for m in e.methods]
    rows = []
    universal_cache = {}
    for seed in e.seeds:
        for src in e.sources:
            t = src.resolve(seed)
            for method in methods:
                if isinstance(method, LobcqMethod):
                    cfg = method.config(seed)
                    if e.calibration_mode == "universal":
                        key = (method.label, seed)
                        if key not in universal_cache:
                            calib_t = synth_tensor(e.calib_dist, e.calib_size, seed)
                            fam, tr = calibrate_tensor(
                                calib_t, cfg, sample_blocks=e.sample_blocks
                            )
                            if method.freeze:
                                fam = freeze_family(fam)
                            universal_cache[key] = (fam, tr)
                        fam, tr = universal_cache[key]
                    else:
                        fam, tr = calibrate_tensor(t, cfg, sample_blocks=e.sample_blocks)
                        if method.freeze:
                            fam = freeze_family(fam)
                    rows.append(_run_lobcq(method, t, seed, fam, tr))
                else:
                    rows.append(_run_simple(method, t, seed))
    rows.sort(key=lambda r: (r.tensor, r.method, r.seed))
    return EvalReport(rows=rows, aggregates=_aggregate(rows))


# --- config sweep ----------------------------------------------------------

@dataclass
class SweepCell:
    block_len: int
    array_len: int
    num_codebooks: int
    bits: int
    bits_per_scalar: Fraction
    nmse: float

    def to_dict(self) -> dict:
        return {
            "Lb": self.block_len,
            "La": self.array_len,
            "Nc": self.num_codebooks,
            "B": self.bits,
            "bits_exact": str(self.bits_per_scalar),
            "bits": float(self.bits_per_scalar),
            "nmse": self.nmse,
        }


def sweep_configs(t: TensorView, lb_values, la_values, nc_values, bits: int = 4,
                  seed: int = 0, max_iters: int = 100) -> list:
    """Exact bitwidth plus measured NMSE for every grid cell on ``t``."""
    cells = []
    for lb in lb_values:
        for la in la_values:
            for nc in nc_values:
                cfg = QuantConfig(
                    block_len=lb, array_len=la, num_codebooks=nc, bits=bits,
                    max_iters=max_iters, seed=seed,
                )
                fam, _ = calibrate_tensor(t, cfg)
                frozen = freeze_family(fam)
                recon = decode(encode(t, frozen, cfg), frozen)
                rep = effective_bitwidth(cfg)
                cells.append(
                    SweepCell(
                        block_len=lb, array_len=la, num_codebooks=nc, bits=bits,
                        bits_per_scalar=rep.effective_bits_per_scalar,
                        nmse=nmse(t, recon),
                    )
                )
    return cells


# --- report emission -------------------------------------------------------

def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, list):
        return ";".join(f"{v:.6g}" for v in value)
    return str(value)


def emit_report(report: EvalReport, path, fmt: str = "csv"):
    """Write the report; columns keep a stable order, floats print at 6 s.f."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_COLUMNS)
            for r in report.rows:
                w.writerow([_fmt_cell(getattr(r, c)) for c in EVAL_COLUMNS])
    elif fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(EVAL_COLUMNS) + " |",
                 "|" + "|".join([" --- "] * len(EVAL_COLUMNS)) + "|"]
        for r in report.rows:
            lines.append(
                "| " + " | ".join(_fmt_cell(getattr(r, c)) for c in EVAL_COLUMNS) + " |"
            )
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValidationError(f"unknown report format: {fmt!r}")
    log.info("wrote %s report with %d rows to %s", fmt, len(report.rows), path)


def emit_sweep(cells, path, fmt: str = "csv"):
    """Write sweep cells with the same conventions as ``emit_report``."""
    path = Path(path)
    cols = ("Lb", "La", "Nc", "B", "bits_exact", "bits", "nmse")
    dicts = [c.to_dict() for c in cells]
    if fmt == "json":
        path.write_text(json.dumps({"cells": dicts}, indent=2) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for d in dicts:
                w.writerow([_fmt_cell(d[c]) for c in cols])
    elif fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(cols) + " |",
                 "|" + "|".join([" --- "] * len(cols)) + "|"]
        for d in dicts:
            lines.append("| " + " | ".join(_fmt_cell(d[c]) for c in cols) + " |")
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValidationError(f"unknown report format: {fmt!r}")
