"""Command-line entry point: ``demgan <verb> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from demgan import pipeline
from demgan.config import dump_config, load_config
from demgan.errors import ConfigError, DataError, TrainingDivergedError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("demgan")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set stage1.steps=100 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="demgan", description="RGB-to-DEM cGAN pipeline")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("sites", parents=[common], help="select sites from the cloud-fraction grid")
    sub.add_parser("build", parents=[common], help="composite scenes and write RGB/DEM tile pairs")
    sub.add_parser("curate", parents=[common], help="quality flags, exclusion and split")
    p = sub.add_parser("train", parents=[common], help="train stage 1 or refine with stage 2")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--ssim-filter", type=float, default=None,
                   help="stage 2: drop training pairs whose stage-1 SSIM is below this")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", help="checkpoint path (default: stage-1 checkpoint)")
    p.add_argument("--label", help="report subdirectory name (default: checkpoint stem)")
    p.add_argument("--untrained", action="store_true", help="score the stage-1 initialisation")
    p = sub.add_parser("report", parents=[common], help="compare evaluated runs")
    p.add_argument("--runs", nargs="*", help="report labels in order (default: all)")
    p = sub.add_parser("synth", parents=[common], help="write synthetic inputs for a desk-scale run")
    p.add_argument("what", choices=("grid", "catalog", "pairs"),
                   help="cloud-fraction grid, scene catalog for the selected sites, or ready-made tile pairs")
    sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, args.overrides)
    verb = args.verb
    if verb == "show-config":
        sys.stdout.write(dump_config(cfg))
    elif verb == "sites":
        pipeline.cmd_sites(cfg)
    elif verb == "build":
        pipeline.cmd_build(cfg)
    elif verb == "curate":
        pipeline.cmd_curate(cfg)
    elif verb == "train":
        if args.stage == 1 and args.ssim_filter is not None:
            raise ConfigError("--ssim-filter only applies to --stage 2")
        if args.ssim_filter is not None and not -1 <= args.ssim_filter <= 1:
            raise ConfigError("--ssim-filter must lie in [-1, 1]")
        pipeline.cmd_train(cfg, args.stage, args.ssim_filter)
    elif verb == "eval":
        if args.untrained and args.checkpoint:
            raise ConfigError("--untrained and --checkpoint are mutually exclusive")
        pipeline.cmd_eval(cfg, args.checkpoint, args.label, untrained=args.untrained)
    elif verb == "report":
        rows = pipeline.cmd_report(cfg, args.runs)
        sys.stdout.write(pipeline.format_table(rows))
    elif verb == "synth":
        if args.what == "grid":
            pipeline.cmd_synth_grid(cfg)
        elif args.what == "catalog":
            pipeline.cmd_synth_catalog(cfg)
        else:
            pipeline.cmd_synth_pairs(cfg)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
