"""Command-line runner for the gridworld experiments.

Exit status is 0 when every run converged and every protocol check passed,
2 when a run or check is flagged in the manifest, and 1 on bad input.
"""

import argparse
import dataclasses
import logging
import sys

from .experiments import ConfigError, ExperimentConfig, run_experiment
from .solver import SolveError

log = logging.getLogger("dcpo")

SUBCOMMANDS = {
    "solve": "solve",
    "eta-sweep": "eta_sweep",
    "rho-sweep": "rho_sweep",
    "imitate": "imitate",
    "no-up": "no_up",
}
HELP = {
    "solve": "single solve with the configured marginal constraints",
    "eta-sweep": "hard action-marginal sweep over [a, .5-a, .5-a, a]",
    "rho-sweep": "state-marginal concentration on three target cells",
    "imitate": "imitate the risk-averse policy through its marginals",
    "no-up": "forbid the up action through the action marginal",
}


def _add_common(p):
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--out", help="output directory (default: config output_dir or .)")
    p.add_argument("--mdp", help="builtin MDP name or MDP JSON path")
    p.add_argument("--epsilon", type=float, help="reward temperature")
    p.add_argument("--eps1", type=float, help="state-marginal penalty weight")
    p.add_argument("--eps2", type=float, help="action-marginal penalty weight (omit for hard)")
    p.add_argument("--max-sweeps", type=int, help="Dykstra sweep cap")
    p.add_argument("--tol", type=float, help="Frobenius tolerance between sweeps")
    p.add_argument("--marginal-tol", type=float, help="sup-norm tolerance on hard marginals")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="dcpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _add_common(sub.add_parser(name, help=HELP[name]))
    return parser


def load_config(args):
    experiment = SUBCOMMANDS[args.command]
    if args.config:
        config = ExperimentConfig.from_json(args.config)
        if config.experiment != experiment:
            raise ConfigError(f"config describes {config.experiment!r}, "
                              f"but the subcommand is {args.command!r}")
    else:
        config = ExperimentConfig(experiment=experiment)
    overrides = {}
    for flag, key in (("mdp", "mdp"), ("epsilon", "epsilon"), ("eps1", "epsilon1"),
                      ("eps2", "epsilon2"), ("out", "output_dir")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    stop = {}
    for flag, key in (("max_sweeps", "max_sweeps"), ("tol", "frobenius_tol"),
                      ("marginal_tol", "marginal_tol")):
        value = getattr(args, flag)
        if value is not None:
            stop[key] = value
    if stop:
        overrides["stop"] = dataclasses.replace(config.stop, **stop)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        result = run_experiment(config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolveError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return 2
    for record in result.runs:
        rep = record.report
        status = "converged" if rep.converged else "NOT CONVERGED"
        print(f"{record.name}: {status} after {rep.iterations} sweeps, "
              f"E[r] = {rep.expected_return:.6g}")
        log.info("%s\n%s", record.name, record.render)
    failed = [k for k, v in result.checks.items() if not v]
    for name in failed:
        print(f"check failed: {name}")
    print(f"manifest: {result.manifest_path}")
    return 0 if result.ok else 2


if __name__ == "__main__":
    sys.exit(main())
