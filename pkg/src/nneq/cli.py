"""Command line interface: ``nneq <verb> [--config FILE] [--profile P] [--seed-set S] [--out DIR]``."""

import argparse
import logging
import os
import sys

from .config import dump_config, load_config, make_config
from .errors import ConfigurationError, StageError
from .pipeline import Pipeline, complexity_rows
from .report import emit_report, write_complexity_csv

VERBS = {
    "simulate": "simulate",
    "train": "train",
    "prune": "prune",
    "quantize": "quantize",
    "complexity": "complexity",
    "bench": "bench",
    "all": "bench",
}


def _parser():
    p = argparse.ArgumentParser(prog="nneq", description="Compressed MLP equalizer experiments")
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--profile", choices=["paper", "desk"], help="scale profile (default: paper)")
    p.add_argument("--seed-set", help="named seed set or integer offset")
    p.add_argument("--out", help="output directory (overrides NNEQ_OUTPUT_DIR)")
    p.add_argument("--fresh", action="store_true", help="ignore existing stage checkpoints")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_complexity(rows):
    print(f"{'variant':<12} {'sparsity':>8} {'BoPs':>16} {'BoPs red.%':>10} {'bytes':>8} {'size red.%':>10}")
    for r in rows:
        print(f"{r.label:<12} {r.sparsity:>8.2f} {r.total_bops:>16.2f} {r.reduction_pct:>10.2f} "
              f"{r.model_bytes:>8d} {r.size_reduction_pct:>10.2f}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config, args.profile, args.seed_set, args.out)
        else:
            cfg = make_config(args.profile or "paper", None, args.seed_set, args.out)
    except (ConfigurationError, OSError, ValueError) as e:
        print(f"nneq: configuration error: {e}", file=sys.stderr)
        return 2
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        dump_config(cfg, os.path.join(cfg.output_dir, "config.json"))
        if args.verb == "complexity":
            rows = complexity_rows(cfg)
            write_complexity_csv(os.path.join(cfg.output_dir, "complexity.csv"), rows)
            _print_complexity(rows)
            return 0
        pipe = Pipeline(cfg, resume=not args.fresh)
        results = pipe.run(VERBS[args.verb])
        if args.verb in ("all", "bench", "quantize"):
            results.complexity = complexity_rows(cfg, pipe.fp32, pipe.quantized)
        emit_report(results, cfg.output_dir, figures=not args.no_figures)
    except StageError as e:
        print(f"nneq: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"nneq: I/O error: {e}", file=sys.stderr)
        return 4
    for r in results.q_rows:
        print(f"{r.power_dbm:+5.1f} dBm  {r.stage:<13} sparsity {r.sparsity:4.2f}  pol {r.polarization}  "
              f"BER {r.ber:.3e}  Q {r.q_db:6.3f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
