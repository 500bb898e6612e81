"""Command-line entry point.

Usage::

    etswarm run scenarios/t_shape.toml --seed 7 --loss-prob 0.0 --out runs/t7
    etswarm run --scenario scenarios/t_cut.toml --trace --frames-every 100
    etswarm compile src/etswarm/data/t_shape.pbm

``run`` exits 0 when every fragment converged, 2 at ``max_ticks`` without
convergence, 3 when a fragment ended on a terminal diagnostic (such as a
remnant too small to rebuild anything), and 1 on input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .engine import SeedPlacementError
from .gene import GeneError, serialize_gene
from .runner import EXIT_INPUT_ERROR, load_gene, run_scenario
from .scenario import ScenarioError, bundled_bitmap, load_scenario, validate

log = logging.getLogger("etswarm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etswarm",
        description="Swarm shape formation and regeneration simulator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write its report")
    run.add_argument("scenario_path", nargs="?", metavar="SCENARIO", help="scenario TOML file")
    run.add_argument("--scenario", dest="scenario_flag", metavar="PATH",
                     help="scenario TOML file (alternative to the positional argument)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--loss-prob", type=float, help="override the message loss probability")
    run.add_argument("--max-ticks", type=int, help="override the tick budget")
    run.add_argument("--out", type=Path, help="output directory (default: runs/<scenario name>)")
    run.add_argument("--frames-every", type=int, help="write an SVG frame every N ticks (0: none)")
    run.add_argument("--trace", action="store_true", default=None, help="write trace.log")

    comp = sub.add_parser("compile", help="print the gene table of a bitmap")
    comp.add_argument("bitmap", help="bitmap file, or the name of a bundled shape")
    return parser


def _cmd_run(args) -> int:
    path = args.scenario_flag or args.scenario_path
    if path is None:
        log.error("no scenario given")
        return EXIT_INPUT_ERROR
    try:
        scn = load_scenario(path)
        scn = scn.with_overrides(seed=args.seed, loss_prob=args.loss_prob,
                                 max_ticks=args.max_ticks, frames_every=args.frames_every,
                                 trace=args.trace)
        validate(scn)
        if not Path(scn.bitmap).is_file():
            raise ScenarioError(f"bitmap file not found: {scn.bitmap}")
        out = args.out or scn.out_dir or Path("runs") / scn.name
        result = run_scenario(scn, out)
    except (ScenarioError, GeneError, SeedPlacementError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT_ERROR
    log.info("wrote %s", out / "report.txt")
    for k, f in enumerate(result.report.fragments):
        log.info("fragment %d: size %d, stable %.2f, bijection %s, diagnostic %s",
                 k, f.size, f.stable_fraction, f.bijection, f.diagnostic or "-")
    print(f"status {result.status} exit {result.exit_code} ticks {result.world.tick} out {out}")
    return result.exit_code


def _cmd_compile(args) -> int:
    path = Path(args.bitmap)
    if not path.is_file():
        path = bundled_bitmap(args.bitmap) or path
    try:
        gene = load_gene(path)
    except (GeneError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT_ERROR
    sys.stdout.write(serialize_gene(gene))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_compile(args)


if __name__ == "__main__":
    sys.exit(main())
