"""Command-line front end: ``qcsim run`` and ``qcsim codec {compress,decompress}``.

Exit codes: 0 ok, 2 configuration, 3 resource exhausted, 4 I/O,
5 circuit parse error, 6 corruption.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import reference
from .circuits import builtin, parse_circuit
from .codec import (
    CodecId, CompressedBlock, ErrorBound, compress_block, decompress_block, error_cdf,
    lag1_autocorrelation, pointwise_relative_errors,
)
from .errors import (
    CheckpointCorruptionError, CheckpointError, CircuitParseError, ConfigurationError,
    CorruptionError, FormatError, ResourceExhausted, UnsupportedModeError,
)
from .ladder import DEFAULT_LEVELS, parse_levels
from .runtime import SimulationConfig, Simulator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_IO = 4
EXIT_PARSE = 5
EXIT_CORRUPT = 6

MEASURE_MAX_QUBITS = 16

_UNITS = {"": 1, "b": 1, "k": 1e3, "kb": 1e3, "m": 1e6, "mb": 1e6, "g": 1e9, "gb": 1e9,
          "t": 1e12, "tb": 1e12, "kib": 2 ** 10, "mib": 2 ** 20, "gib": 2 ** 30,
          "tib": 2 ** 40}
_CODECS = {"c": CodecId.SOLUTION_C, "d": CodecId.SOLUTION_D}


def parse_size(text: str) -> float:
    """'1GiB' -> 1073741824; 'inf' or 'none' means unlimited."""
    t = text.strip().lower()
    if t in ("inf", "none", "unlimited"):
        return float("inf")
    m = re.fullmatch(r"([0-9]*\.?[0-9]+(?:e[+-]?[0-9]+)?)\s*([a-z]*)", t)
    if not m or m.group(2) not in _UNITS:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return float(m.group(1)) * _UNITS[m.group(2)]


def _levels(text: str):
    try:
        return parse_levels(text)
    except (ConfigurationError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a circuit")
    run.add_argument("--qubits", type=int, required=True)
    run.add_argument("--ranks", type=int, default=1)
    run.add_argument("--blocks-per-rank", type=int, default=1)
    run.add_argument("--budget", type=parse_size, default=float("inf"),
                     help="memory budget for the whole run, e.g. 512MiB")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--circuit", type=Path, help="circuit text file")
    src.add_argument("--builtin", choices=["grover", "qft", "qaoa", "random"])
    run.add_argument("--depth", type=int, default=11, help="random circuit cycles")
    run.add_argument("--rows", type=int, help="random circuit grid rows")
    run.add_argument("--rounds", type=int, default=1, help="QAOA rounds")
    run.add_argument("--iterations", default="optimal", help="Grover iterations")
    run.add_argument("--target", type=int, help="Grover marked basis state")
    run.add_argument("--ladder", type=_levels, default=DEFAULT_LEVELS,
                     help="comma-separated levels; a single value forces that level")
    run.add_argument("--codec", choices=sorted(_CODECS), default="c")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--no-cache", action="store_true")
    run.add_argument("--checkpoint", type=Path)
    run.add_argument("--checkpoint-every", type=int)
    run.add_argument("--resume", type=Path)
    run.add_argument("--report", type=Path, help="JSON report path; text goes next to it")
    run.add_argument("--max-gates", type=int, help="stop after this many gates")
    run.add_argument("--no-measure", action="store_true",
                     help=f"skip the dense reference (done by default for n <= {MEASURE_MAX_QUBITS})")
    run.set_defaults(func=cmd_run)

    codec = sub.add_parser("codec", help="standalone block codec")
    csub = codec.add_subparsers(dest="action", required=True)
    comp = csub.add_parser("compress", help="raw little-endian float64 -> compressed block")
    comp.add_argument("input", type=Path)
    comp.add_argument("output", type=Path)
    comp.add_argument("--mode", choices=["lossless", "rel", "abs"], default="rel")
    comp.add_argument("--bound", type=float, default=1e-3)
    comp.add_argument("--codec", choices=sorted(_CODECS), default="c")
    comp.add_argument("--stats", type=Path, help="write JSON stats here ('-' for stdout)")
    comp.set_defaults(func=cmd_compress)
    dec = csub.add_parser("decompress", help="compressed block -> raw float64")
    dec.add_argument("input", type=Path)
    dec.add_argument("output", type=Path)
    dec.set_defaults(func=cmd_decompress)
    return p


# -- run ------------------------------------------------------------------------

def _load_circuit(args):
    if args.circuit is not None:
        try:
            text = args.circuit.read_text()
        except OSError as exc:
            raise _IOFailure(f"cannot read circuit: {exc}") from exc
        return parse_circuit(text, args.qubits)
    if args.builtin is None:
        raise ConfigurationError("give --circuit or --builtin")
    iterations = args.iterations if args.iterations == "optimal" else int(args.iterations)
    return builtin(args.builtin, args.qubits, seed=args.seed, iterations=iterations,
                   target=args.target, depth=args.depth, rows=args.rows, rounds=args.rounds)


class _IOFailure(Exception):
    pass


def cmd_run(args) -> int:
    config = SimulationConfig(
        qubits=args.qubits, ranks=args.ranks, blocks_per_rank=args.blocks_per_rank,
        budget=args.budget, ladder=args.ladder, codec=_CODECS[args.codec], seed=args.seed,
        cache=not args.no_cache,
    )
    config.validate()
    circuit = _load_circuit(args)
    if args.resume is not None:
        sim = Simulator.resume(args.resume, config)
    else:
        sim = Simulator(config)
    with sim:
        try:
            sim.run(circuit, stop_after=args.max_gates, checkpoint_path=args.checkpoint,
                    checkpoint_every=args.checkpoint_every)
        except ResourceExhausted:
            if args.report is not None:
                _write_report(sim.report(), args.report)
            raise
        ref = None
        if not args.no_measure and args.qubits <= MEASURE_MAX_QUBITS:
            ref = reference.simulate(circuit, stop=sim.gate_index)
        report = sim.report(ref)
    if args.report is not None:
        _write_report(report, args.report)
    else:
        sys.stdout.write(report.to_text())
    return EXIT_OK


def _write_report(report, path: Path) -> None:
    try:
        path.write_text(report.to_json() + "\n")
        path.with_suffix(".txt").write_text(report.to_text())
    except OSError as exc:
        raise _IOFailure(f"cannot write report: {exc}") from exc


# -- codec ------------------------------------------------------------------------

def _bound(mode: str, value: float) -> ErrorBound:
    if mode == "lossless":
        return ErrorBound.lossless()
    if mode == "rel":
        return ErrorBound.relative(value)
    return ErrorBound.absolute(value)


def cmd_compress(args) -> int:
    try:
        raw = args.input.read_bytes()
    except OSError as exc:
        raise _IOFailure(f"cannot read input: {exc}") from exc
    if not raw or len(raw) % 16:
        raise _IOFailure(f"input has {len(raw)} bytes; expected a positive multiple of 16 "
                         "(interleaved real/imag float64 pairs)")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64).view(np.complex128)
    bound = _bound(args.mode, args.bound)
    codec = CodecId.LOSSLESS_ONLY if args.mode == "lossless" else _CODECS[args.codec]
    cb = compress_block(values, bound, codec, allow_absolute=True)
    try:
        args.output.write_bytes(cb.to_bytes())
    except OSError as exc:
        raise _IOFailure(f"cannot write output: {exc}") from exc
    if args.stats is not None:
        out = decompress_block(cb)
        stats = codec_stats(values, out, bound, len(raw), cb.nbytes)
        text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
        if str(args.stats) == "-":
            sys.stdout.write(text)
        else:
            try:
                args.stats.write_text(text)
            except OSError as exc:
                raise _IOFailure(f"cannot write stats: {exc}") from exc
    return EXIT_OK


def codec_stats(original, decompressed, bound: ErrorBound, raw_bytes: int,
                compressed_bytes: int) -> dict:
    d = np.ascontiguousarray(original).view(np.float64)
    dd = np.ascontiguousarray(decompressed).view(np.float64)
    if bound.mode.name == "ABSOLUTE":
        err = np.abs(d - dd)
    else:
        err = pointwise_relative_errors(d, dd)
    scale = bound.value if bound.value > 0 else 1.0
    normalized = err / scale
    return {
        "raw_bytes": raw_bytes,
        "compressed_bytes": compressed_bytes,
        "ratio": raw_bytes / compressed_bytes,
        "bound": str(bound),
        "max_error": float(err.max()),
        "max_relative_error": float(pointwise_relative_errors(d, dd).max()),
        "error_cdf": error_cdf(normalized) if bound.value > 0 else [],
        "lag1_autocorrelation": lag1_autocorrelation(err) if err.size > 1 else 0.0,
    }


def cmd_decompress(args) -> int:
    try:
        data = args.input.read_bytes()
    except OSError as exc:
        raise _IOFailure(f"cannot read input: {exc}") from exc
    cb = CompressedBlock.from_bytes(data)
    values = decompress_block(cb)
    try:
        args.output.write_bytes(values.astype("<c16").tobytes())
    except OSError as exc:
        raise _IOFailure(f"cannot write output: {exc}") from exc
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CircuitParseError as exc:
        code, msg = EXIT_PARSE, f"parse error: {exc}"
    except ResourceExhausted as exc:
        code, msg = EXIT_RESOURCE, f"resource exhausted: {exc}"
    except (CheckpointCorruptionError, CorruptionError, FormatError) as exc:
        code, msg = EXIT_CORRUPT, f"corrupt data: {exc}"
    except (ConfigurationError, UnsupportedModeError) as exc:
        code, msg = EXIT_CONFIG, f"configuration error: {exc}"
    except (CheckpointError, _IOFailure, OSError) as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    print(f"qcsim: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
