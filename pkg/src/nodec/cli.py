"""Command-line entry point: ``nodec {linear,kuramoto,normalize,gradcheck}``.

Exit status is 0 on success, 1 when the gradient check misses its
tolerance, 2 for configuration errors and 3 when a run diverges.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DivergenceError, ParameterError
from .experiments import (CONTROLLERS, PRESETS, load_config, normalize_energies, parse_set, render_config,
                          run_gradcheck, run_kuramoto, run_linear)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--preset", choices=PRESETS, default="desk", help="size preset (default: desk)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodec", description="Neural ODE control experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    lin = sub.add_parser("linear", help="two-node linear system against the minimum-energy control")
    _common(lin)

    kur = sub.add_parser("kuramoto", help="Kuramoto synchronization on a network")
    _common(kur)
    kur.add_argument("--controller", choices=CONTROLLERS, default="nodec")

    norm = sub.add_parser("normalize", help="normalize two runs' energy curves by the larger final energy")
    norm.add_argument("run_a")
    norm.add_argument("run_b")
    norm.add_argument("--out", required=True)

    gc = sub.add_parser("gradcheck", help="compare training gradients with finite differences")
    gc.add_argument("--out", default="runs/gradcheck")
    gc.add_argument("--seeds", type=int, default=20)
    gc.add_argument("--tol", type=float, default=1e-5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("linear", "kuramoto"):
            cfg = load_config(args.command, args.preset, args.config, args.seed, parse_set(args.set))
            if args.print_config:
                sys.stdout.write(render_config(args.command, cfg))
                return EXIT_OK
            if args.command == "linear":
                out = args.out or "runs/linear"
                summary = run_linear(cfg, out)
            else:
                out = args.out or f"runs/kuramoto-{cfg['topology']}-{args.controller}"
                summary = run_kuramoto(cfg, args.controller, out)
            print(f"wrote {out}")
            for key in sorted(k for k, v in summary.items() if isinstance(v, (int, float, str)) and k != "diverged"):
                print(f"  {key}: {summary[key]}")
            return EXIT_OK
        if args.command == "normalize":
            path = normalize_energies(args.run_a, args.run_b, args.out)
            print(f"wrote {path}")
            return EXIT_OK
        summary = run_gradcheck(args.out, args.seeds, args.tol)
        print(f"max relative error {summary['max_rel_error']:.3e} (tolerance {args.tol:g})")
        return EXIT_OK if summary["passed"] else EXIT_CHECK_FAILED
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
