"""Command-line surface.

Subcommands mirror the pipeline stages (synth, featurize, train,
extract, sad, search, znorm, eval, det), plus `pipeline` to run them
all and `compare` for significance testing between two finished runs.
Common flags: --config, --seed, --out, --threads; flags override
config-file keys. Exit codes: 0 success, 2 configuration error,
3 data error, 4 degenerate-statistics error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_experiment, write_config_template
from .errors import DataError, QbeError
from .evaluation import det as det_points_of
from .pipeline import (
    RunPaths,
    compare_runs,
    run_pipeline,
    run_stage,
)

log = logging.getLogger(__name__)

STAGE_COMMANDS = ("synth", "featurize", "train", "extract", "sad",
                  "search", "znorm", "eval")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="INI config file (flags override its keys)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="seed for every stochastic stage")
    parser.add_argument("--out", default="run", metavar="DIR",
                        help="run directory (default: ./run)")
    parser.add_argument("--threads", type=int, metavar="N",
                        help="worker processes for the search stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbestd",
        description="query-by-example spoken term detection on synthetic corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    descriptions = {
        "synth": "generate the synthetic corpus",
        "featurize": "prepare model-ready features from the corpus",
        "train": "train the bottleneck model",
        "extract": "extract bottleneck features for the test archives",
        "sad": "remove non-speech frames from the matching features",
        "search": "score every query against every document",
        "znorm": "z-normalize scores per query",
        "eval": "compute metrics, report, and figures",
    }
    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=descriptions[name])
        _add_common(p)
        p.set_defaults(handler=_stage_handler(name))

    p = sub.add_parser("det", help="emit the DET file and figure from scores")
    _add_common(p)
    p.set_defaults(handler=cmd_det)

    p = sub.add_parser("pipeline", help="run every stage in order")
    _add_common(p)
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("compare",
                       help="paired significance test between two runs")
    p.add_argument("run_a", help="first run directory")
    p.add_argument("run_b", help="second run directory")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("template", help="write a commented config template")
    p.add_argument("path", help="where to write the template")
    p.set_defaults(handler=cmd_template)
    return parser


def _experiment(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["run.threads"] = args.threads
    return load_experiment(getattr(args, "config", None), overrides)


def _stage_handler(name: str):
    def handler(args) -> int:
        cfg = _experiment(args)
        result, seconds = run_stage(name, cfg, RunPaths(args.out))
        print(f"{name}: done in {seconds:.2f} s ({args.out})")
        if name == "eval" and result is not None:
            _print_report(result)
        return 0

    return handler


def _print_report(report) -> None:
    print(f"cnxe_min {report.cnxe_min:.4f}")
    print(f"mtwv {report.mtwv:.4f} at threshold {report.mtwv_threshold:.4f}")
    print(f"trials {report.n_targets} targets / "
          f"{report.n_nontargets} nontargets, prior {report.prior:.4f}, "
          f"beta {report.beta:.4f}")


def cmd_pipeline(args) -> int:
    cfg = _experiment(args)
    report = run_pipeline(cfg, args.out)
    _print_report(report)
    print(f"artifacts in {args.out}")
    return 0


def cmd_det(args) -> int:
    from .corpus import trial_labels
    from .evaluation import emit_det_file
    from .pipeline import _load_manifest
    from .plots import plot_det
    from .search import read_scores

    cfg = _experiment(args)
    paths = RunPaths(args.out)
    if paths.scores_znormed.exists():
        table = read_scores(paths.scores_znormed, state="znormed")
    elif paths.scores_raw.exists():
        table = read_scores(paths.scores_raw)
    else:
        raise DataError(f"no score files under {paths.root}; run search first")
    labels = trial_labels(_load_manifest(paths))
    points = det_points_of(table, labels)
    paths.report_dir.mkdir(parents=True, exist_ok=True)
    emit_det_file(points, paths.report_dir / "det.tsv")
    plot_det(points, paths.report_dir / "det.png", label=cfg.architecture)
    print(f"wrote {paths.report_dir / 'det.tsv'} and det.png")
    return 0


def cmd_compare(args) -> int:
    t, p, text = compare_runs(args.run_a, args.run_b)
    print(text, end="")
    return 0


def cmd_template(args) -> int:
    write_config_template(args.path)
    print(f"wrote {args.path}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except QbeError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"error: missing file: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
