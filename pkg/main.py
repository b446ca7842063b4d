# main.py
"""
Crowd Simulation Engine
Main entry point: run a scenario or one of the verification probes
"""

import argparse
import os
import sys
from typing import List, Optional

# Add project root to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config.settings import MODES, Config
from modules.diagnostics import eikonal_probe, kernel_probe, lcp_probe
from modules.metrics import export_metrics
from modules.scene import Grid, load_scenario
from modules.simulator import run
from utils.logger import get_logger, resolve_log_level, setup_logging
from utils.utility import ConfigError, ScenarioParseError, SceneValidationError

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

KERNEL_TARGETS = {"particle_scaled": 1.19, "centroid_scaled": 1.14}
KERNEL_TOLERANCE = 0.01
LCP_TOLERANCE = 1e-6
# fast marching error bound in grid cells
EIKONAL_TOLERANCE_CELLS = 2.0


class UsageError(Exception):
    """Bad command-line arguments"""


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="crowdsim", description="Multiscale crowd particle simulation")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--no-log-file", action="store_true", help="log to the console only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p_run = sub.add_parser("run", help="run a scenario and export metrics")
    p_run.add_argument("--config", help="flat TOML configuration file")
    p_run.add_argument("--scene", required=True, help="JSON scenario file")
    p_run.add_argument("--out", help="output directory (overrides output_dir)")
    p_run.add_argument("--seed", type=int, help="random seed override")
    p_run.add_argument("--mode", choices=MODES, help="planner mode override")

    p_kernel = sub.add_parser("probe-kernel", help="lattice density bounds of the interpolation kernel")
    p_kernel.add_argument("--kernel", default="wendland")
    p_kernel.add_argument("--spacings", type=float, nargs="+", default=[0.5, 1.0, 2.0])

    p_eik = sub.add_parser("probe-eikonal", help="fast marching against the Euclidean distance")
    p_eik.add_argument("--n", type=int, default=100)
    p_eik.add_argument("--cell-size", type=float, default=1.0)

    p_lcp = sub.add_parser("probe-lcp", help="PGS against the active-set oracle")
    p_lcp.add_argument("--n", type=int, default=8)
    p_lcp.add_argument("--trials", type=int, default=1000)
    p_lcp.add_argument("--seed", type=int, default=7)

    p_scene = sub.add_parser("validate-scene", help="check a scenario file")
    p_scene.add_argument("--scene", required=True)
    p_scene.add_argument("--cell-size", type=float, default=1.0)
    return parser


def load_config(args) -> Config:
    config = Config.from_file(args.config) if args.config else Config()
    config.apply_env()
    if args.seed is not None:
        config.seed = args.seed
    if args.mode is not None:
        config.mode = args.mode
    if args.out is not None:
        config.output_dir = args.out
    return config.validate()


def run_simulation(args) -> int:
    """Run a scenario and write the metric files"""
    config = load_config(args)
    scene = load_scenario(args.scene)
    logger.info(str(config))
    if not config.validate_paths():
        return EXIT_RUNTIME

    result = run(config, scene)
    written = export_metrics(result.metrics, config.output_dir, config=config.to_dict(),
                             seed=config.seed, scene=scene.to_dict())
    summary = result.metrics.summary()
    print(f"run: {summary['particles']} particles, {summary['exited']} exited, "
          f"{result.steps} steps, t={result.time:.2f}s")
    for label, path in written.items():
        print(f"  {label}: {path}")
    return EXIT_OK


def run_kernel_probe(args) -> int:
    table = kernel_probe(args.spacings, args.kernel)
    print(table.to_string(index=False))
    ok = True
    for column, target in KERNEL_TARGETS.items():
        worst = float(((table[column] - target).abs() / target).max())
        ok &= worst <= KERNEL_TOLERANCE
        print(f"{column}: target {target}/d^2, worst relative deviation {worst:.4f}")
    bracketed = bool(((table["centroid"] <= table["packing"]) & (table["packing"] <= table["particle"])).all())
    print(f"packing density bracketed: {bracketed}")
    return EXIT_OK if ok and bracketed else EXIT_RUNTIME


def run_eikonal_probe(args) -> int:
    result = eikonal_probe(args.n, args.cell_size)
    bound = EIKONAL_TOLERANCE_CELLS * args.cell_size
    print(f"grid {args.n}x{args.n}: max |phi - distance| = {result['max_error']:.4f} "
          f"(neighbour {result['neighbour']:.9f}, diagonal {result['diagonal']:.9f}, "
          f"{result['runtime']:.3f}s), bound {bound:g}")
    return EXIT_OK if result["max_error"] <= bound else EXIT_RUNTIME


def run_lcp_probe(args) -> int:
    result = lcp_probe(args.n, args.trials, args.seed)
    ok = result["max_deviation"] <= LCP_TOLERANCE
    relation = "<=" if ok else ">"
    print(f"{result['trials']} trials, n={args.n}: max deviation {result['max_deviation']:.3e} "
          f"{relation} {LCP_TOLERANCE:g}, max FB residual {result['max_fb']:.3e}")
    return EXIT_OK if ok else EXIT_RUNTIME


def run_validate_scene(args) -> int:
    scene = load_scenario(args.scene)
    grid = Grid.for_scene(scene, args.cell_size)
    print(f"scene '{scene.name}': {scene.width} x {scene.height} m, grid {grid.nx} x {grid.ny}")
    print(f"  obstacles: {len(scene.obstacles)} ({scene.obstacle_fraction():.1%} of the domain)")
    print(f"  entrances: {len(scene.entrances)}, exits: {len(scene.exits)}")
    print("  valid: yes")
    return EXIT_OK


COMMANDS = {
    "run": run_simulation,
    "probe-kernel": run_kernel_probe,
    "probe-eikonal": run_eikonal_probe,
    "probe-lcp": run_lcp_probe,
    "validate-scene": run_validate_scene,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch the sub-command and map failures to exit codes"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    level = "DEBUG" if args.verbose else resolve_log_level()
    setup_logging(log_level=level, log_to_file=not args.no_log_file)

    try:
        return COMMANDS[args.command](args)
    except (ScenarioParseError, SceneValidationError, ConfigError) as e:
        logger.error(f"❌ {e}")
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"❌ {args.command} failed: {e}", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
