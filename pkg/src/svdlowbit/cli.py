"""Command-line interface.

Subcommands:
  decompose  factor a weight tensor into rank-k projections plus residual
  quantize   quantize a tensor file into the group-quantized container
  run        execute a full layer comparison from a JSON config
  selftest   run the built-in verification suite

Exit status: 0 on success, 1 on validation failure, 2 on I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import hgq as hgqmod
from . import pipeline
from . import svd as svdmod
from ._backend import BACKEND
from .errors import DataError, ParameterError, ShapeError
from .tensor import read_svt

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _cmd_decompose(args) -> int:
    w = read_svt(args.weight)
    decomp = svdmod.decompose(w, args.rank, args.sigma_split)
    saliency = None
    if args.calib:
        calib = read_svt(args.calib)
        saliency = svdmod.build_saliency_report(
            calib, args.rank, n_l1=args.sensitive_l1, n_l2=args.sensitive_l2
        )
    manifest = svdmod.write_decomposition(args.out, decomp, saliency, args.sigma_split)
    tail = float(np.linalg.norm(decomp.residual.astype(np.float64)))
    print(f"wrote {manifest} (rank {args.rank}, residual Frobenius norm {tail:.6g})")
    if saliency is None:
        print("note: no --calib given, sensitive-channel selection skipped")
    return EXIT_OK


def _cmd_quantize(args) -> int:
    x = read_svt(args.input)
    if args.mode == "hgq":
        cfg = hgqmod.HgqConfig(sub_group=args.sub, base_group=args.base)
        t = hgqmod.hgq_quantize(x, cfg, axis=args.axis)
    elif args.mode == "per_tensor":
        t = hgqmod.baseline_quantize(x, "per_tensor", axis=args.axis)
    else:
        if args.group is None:
            raise ParameterError("--mode per_group requires --group")
        t = hgqmod.baseline_quantize(x, "per_group", axis=args.axis, group=args.group)
    hgqmod.write_hgq(args.out, t)
    cfg = t.config
    print(
        f"wrote {args.out} ({t.shape[0]}x{t.shape[1]}, axis={t.axis}, "
        f"groups {cfg.sub_group}/{cfg.base_group})"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = pipeline.RunConfig.from_json(args.config)
    report = pipeline.run_decomposed_layer(cfg)
    rendered = pipeline.render_report(report)
    target = args.report or cfg.report
    if target:
        with open(target, "w") as f:
            f.write(rendered)
        print(f"wrote {target} ({len(report['scenarios'])} scenarios, backend {BACKEND})")
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    ok, checks = pipeline.selftest(cost_table_path=args.table)
    for name, passed, detail, elapsed in checks:
        status = "PASS" if passed else "FAIL"
        print(f"[{status}] {name}: {detail} ({elapsed:.2f}s)")
    print(f"selftest {'passed' if ok else 'FAILED'} on backend {BACKEND}")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svdlowbit",
        description="Low-rank decomposition plus low-bit group quantization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="factor a weight tensor into rank-k projections plus residual")
    p.add_argument("--weight", required=True, help="SVT1 weight tensor (d_in x d_out)")
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--out", required=True, help="output directory for factors and manifest")
    p.add_argument("--calib", help="SVT1 calibration activations for sensitive-channel selection")
    p.add_argument("--sigma-split", choices=svdmod.SIGMA_SPLIT_MODES, default="symmetric")
    p.add_argument("--sensitive-l1", type=int, default=svdmod.DEFAULT_L1_SENSITIVE)
    p.add_argument("--sensitive-l2", type=int, default=svdmod.DEFAULT_L2_SENSITIVE)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("quantize", help="quantize an SVT1 tensor into the HGQ1 container")
    p.add_argument("--in", dest="input", required=True, help="SVT1 input tensor")
    p.add_argument("--mode", choices=("hgq", "per_tensor", "per_group"), default="hgq")
    p.add_argument("--sub", type=int, default=32, help="sub-group size (hgq mode)")
    p.add_argument("--base", type=int, default=128, help="base-group size (hgq mode)")
    p.add_argument("--group", type=int, help="group size (per_group mode)")
    p.add_argument("--axis", choices=hgqmod.GROUP_AXES, default="rows",
                   help="grouping/reduction axis (weights: rows, activations: cols)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("run", help="run a layer comparison from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--report", help="report path (overrides the config; stdout if neither is set)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    p.add_argument("--table", help="cost table JSON to validate instead of the default")
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ShapeError, ParameterError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
