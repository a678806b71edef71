"""Gridworld experiment protocols and their on-disk artifacts.

Each ``run_*`` function solves one or more constrained problems and writes,
per run, a directory holding::

    policy.txt        arrow render (or one "state action" line per state)
    policy.json       pi(a|s), row-major
    mu.json           occupancy measure, row-major
    convergence.csv   "sweep,residual" for the run's primary marginal
    report.json       solver summary

plus a ``manifest.json`` at the output root indexing every run, its
convergence flag, sweep count, final residuals and the protocol's checks.
Nothing here is random, so identical configs give byte-identical files.
"""

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dykstra import StopRule
from .gridworld import ACTIONS, _spec_for, build_gridworld, render_policy
from .mdp import Mdp, flow_residual, greedy_actions
from .prox import MarginalPenalty
from .solver import E_MINUS_10, DcpoProblem, SolveError, solve

__all__ = [
    "EXPERIMENTS",
    "BUILTIN_MDPS",
    "ExperimentConfig",
    "ExperimentResult",
    "RunRecord",
    "ConfigError",
    "run_experiment",
    "run_solve",
    "run_eta_sweep",
    "run_rho_sweep",
    "run_imitate",
    "run_no_up",
]

EXPERIMENTS = ("solve", "eta_sweep", "rho_sweep", "imitate", "no_up")
BUILTIN_MDPS = {"gridworld": "standard", "gridworld_risk": "risk_averse"}
DEFAULT_ALPHAS = (E_MINUS_10, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5 - E_MINUS_10)
DEFAULT_TARGET_CELLS = ((0, 2), (1, 2), (2, 3))
DEFAULT_STATE_WEIGHT = 10.0
MARGINAL_CHECK_TOL = 1e-5
RESIDUAL_FLOOR = 1e-3
FLOW_CHECK_TOL = 1e-7


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _penalty_spec(d, axis, name):
    if d is None:
        return None
    if not isinstance(d, dict) or "target" not in d:
        raise ConfigError(f"{name} must be an object with a 'target' list")
    if d.get("axis", axis) != axis:
        raise ConfigError(f"{name} must constrain the {axis} axis")
    return {"target": [float(x) for x in d["target"]], "epsilon": d.get("epsilon")}


@dataclass
class ExperimentConfig:
    """One experiment run, serializable as a single JSON document.

    ``mdp`` is a builtin name (``"gridworld"``, ``"gridworld_risk"``), an
    inline MDP dict, or a path to an MDP JSON file (resolved against
    ``base_dir``).  ``epsilon1``/``epsilon2`` are the state/action penalty
    weights; ``None`` means "protocol default" for the sweeps and "hard" for
    explicit constraints in ``solve``.  ``seed`` is accepted and recorded but
    unused: every solver is deterministic.
    """

    experiment: str = "solve"
    mdp: object = "gridworld"
    epsilon: float = 0.01
    epsilon1: float = None
    epsilon2: float = None
    state_constraint: dict = None
    action_constraint: dict = None
    alphas: tuple = DEFAULT_ALPHAS
    target_cells: tuple = DEFAULT_TARGET_CELLS
    concentration: float = 0.9
    stop: StopRule = field(default_factory=StopRule)
    projection_tol: float = 1e-9
    output_dir: str = "."
    seed: int = 0
    base_dir: str = field(default=".", repr=False, compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if isinstance(self.stop, dict):
            unknown = set(self.stop) - {f.name for f in dataclasses.fields(StopRule)}
            if unknown:
                raise ConfigError(f"unknown stop rule keys {sorted(unknown)}")
            self.stop = StopRule(**self.stop)
        if not (self.epsilon > 0):
            raise ConfigError("epsilon must be positive")
        for name in ("epsilon1", "epsilon2"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be >= 0")
        self.state_constraint = _penalty_spec(self.state_constraint, "state", "state_constraint")
        self.action_constraint = _penalty_spec(self.action_constraint, "action", "action_constraint")
        self.alphas = tuple(float(a) for a in self.alphas)
        for a in self.alphas:
            if not 0.0 <= a <= 0.5:
                raise ConfigError(f"alpha {a!r} does not give a probability vector [a, .5-a, .5-a, a]")
        self.target_cells = tuple(tuple(int(x) for x in c) for c in self.target_cells)
        if not 0.0 < self.concentration < 1.0:
            raise ConfigError("concentration must lie in (0, 1)")
        if isinstance(self.mdp, str) and self.mdp not in BUILTIN_MDPS:
            path = os.path.join(self.base_dir, self.mdp)
            if not os.path.isfile(path):
                raise ConfigError(f"mdp {self.mdp!r} is neither a builtin {sorted(BUILTIN_MDPS)} nor an existing file")
        builtin = isinstance(self.mdp, str) and self.mdp in BUILTIN_MDPS
        if self.experiment != "solve" and not builtin:
            raise ConfigError(f"{self.experiment} runs on a builtin gridworld, got {self.mdp!r}")

    @classmethod
    def from_dict(cls, d, base_dir="."):
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d, base_dir=base_dir)
        except TypeError as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "mdp": self.mdp,
            "epsilon": self.epsilon,
            "epsilon1": self.epsilon1,
            "epsilon2": self.epsilon2,
            "state_constraint": self.state_constraint,
            "action_constraint": self.action_constraint,
            "alphas": list(self.alphas),
            "target_cells": [list(c) for c in self.target_cells],
            "concentration": self.concentration,
            "stop": {"frobenius_tol": self.stop.frobenius_tol,
                     "max_sweeps": self.stop.max_sweeps,
                     "marginal_tol": self.stop.marginal_tol},
            "projection_tol": self.projection_tol,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def load_mdp(self, name=None):
        """Materialize ``name`` (default: the configured MDP) and its grid spec, if any."""
        src = self.mdp if name is None else name
        if isinstance(src, str) and src in BUILTIN_MDPS:
            variant = BUILTIN_MDPS[src]
            return build_gridworld(variant), _spec_for(variant)
        try:
            if isinstance(src, dict):
                return Mdp.from_dict(src), None
            with open(os.path.join(self.base_dir, src), encoding="utf-8") as fh:
                return Mdp.from_json(fh.read()), None
        except (ValueError, KeyError, TypeError, OSError) as exc:
            raise ConfigError(f"invalid mdp: {exc}") from exc


@dataclass
class RunRecord:
    name: str
    report: object
    render: str
    directory: str = None
    residual_label: str = None

    @property
    def mu(self):
        return self.report.mu.mu

    @property
    def policy(self):
        return self.report.policy


@dataclass
class ExperimentResult:
    experiment: str
    runs: list
    checks: dict
    manifest_path: str = None

    @property
    def converged(self):
        return all(r.report.converged for r in self.runs)

    @property
    def ok(self):
        return self.converged and all(self.checks.values())

    def run(self, name):
        for r in self.runs:
            if r.name == name:
                return r
        raise KeyError(name)


def _render(policy, mdp, spec):
    if spec is not None:
        return render_policy(policy, spec)
    best = greedy_actions(policy)
    return "\n".join(f"{mdp.state_labels[s]} {mdp.action_labels[a]}" for s, a in enumerate(best))


def _solve(config, name, mdp, spec, state=None, action=None, epsilon=None):
    problem = DcpoProblem(mdp, epsilon=config.epsilon if epsilon is None else epsilon,
                          state_constraint=state, action_constraint=action,
                          stop=config.stop, projection_tol=config.projection_tol)
    report = solve(problem)
    primary = action if action is not None and action.kind == "hard" else (state or action)
    label = primary.name if primary is not None else None
    return RunRecord(name, report, _render(report.policy, mdp, spec), residual_label=label)


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        # repr-based float output round-trips every double exactly
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_run(record, root, mdp):
    directory = os.path.join(root, record.name)
    os.makedirs(directory, exist_ok=True)
    record.directory = directory
    report = record.report
    with open(os.path.join(directory, "policy.txt"), "w", encoding="utf-8") as fh:
        fh.write(record.render + "\n")
    labels = {"states": list(mdp.state_labels), "actions": list(mdp.action_labels)}
    _dump_json(os.path.join(directory, "policy.json"),
               {**labels, "policy": report.policy.tolist()})
    _dump_json(os.path.join(directory, "mu.json"), {**labels, "mu": report.mu.mu.tolist()})
    if record.residual_label is not None:
        curve = report.residual_curves[record.residual_label]
    else:
        curve = report.sweep_deltas
    with open(os.path.join(directory, "convergence.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sweep", "residual"])
        for i, value in enumerate(curve, start=1):
            writer.writerow([i, repr(float(value))])
    summary = report.summary()
    summary["residual_curve"] = record.residual_label or "sweep_delta"
    summary["metadata"] = dict(report.metadata)
    _dump_json(os.path.join(directory, "report.json"), summary)
    return {k: os.path.join(record.name, f) for k, f in (
        ("render", "policy.txt"), ("policy", "policy.json"), ("mu", "mu.json"),
        ("curve", "convergence.csv"), ("report", "report.json"))}


def _finish(config, runs, checks, mdps, out=None):
    root = os.path.abspath(config.output_dir if out is None else out)
    os.makedirs(root, exist_ok=True)
    entries = []
    for record in runs:
        mdp = mdps[record.name]
        artifacts = _write_run(record, root, mdp)
        flow = float(np.abs(flow_residual(record.mu, mdp)).max())
        checks[f"{record.name}/converged"] = bool(record.report.converged)
        checks[f"{record.name}/flow_residual"] = flow <= FLOW_CHECK_TOL
        entries.append({
            "name": record.name,
            "converged": bool(record.report.converged),
            "sweeps": int(record.report.iterations),
            "final_residuals": record.report.final_residuals(),
            "expected_return": float(record.report.expected_return),
            "flow_residual": flow,
            "artifacts": artifacts,
        })
    checks = {k: bool(v) for k, v in checks.items()}
    result = ExperimentResult(config.experiment, runs, checks)
    manifest = {
        "experiment": config.experiment,
        "config": config.to_dict(),
        "residual_norm": "euclidean",
        "runs": entries,
        "checks": checks,
        "all_converged": result.converged,
        "ok": result.ok,
    }
    result.manifest_path = os.path.join(root, "manifest.json")
    _dump_json(result.manifest_path, manifest)
    return result


def _eta(alpha):
    return np.array([alpha, 0.5 - alpha, 0.5 - alpha, alpha])


def _concentrated(n_states, index, mass):
    rho = np.full(n_states, (1.0 - mass) / (n_states - 1))
    rho[index] = mass
    return rho


def _state_weight(config):
    return DEFAULT_STATE_WEIGHT if config.epsilon1 is None else config.epsilon1


def run_solve(config, out=None):
    """Single solve with the configured marginal constraints."""
    mdp, spec = config.load_mdp()
    state = action = None
    sc, ac = config.state_constraint, config.action_constraint
    try:
        if sc is not None:
            eps = config.epsilon1 if config.epsilon1 is not None else sc["epsilon"]
            state = MarginalPenalty("state", sc["target"], eps)
        if ac is not None:
            eps = config.epsilon2 if config.epsilon2 is not None else ac["epsilon"]
            action = MarginalPenalty("action", ac["target"], eps)
        record = _solve(config, "solve", mdp, spec, state, action)
    except SolveError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    checks = {}
    for c in (state, action):
        if c is not None and c.kind == "hard":
            gap = np.abs(c.marginal(record.mu) - c.target).max()
            checks[f"solve/{c.name}_within_tol"] = gap <= MARGINAL_CHECK_TOL
    return _finish(config, [record], checks, {"solve": mdp}, out)


def run_eta_sweep(config, out=None):
    """Action-marginal sweep over ``eta' = [a, .5 - a, .5 - a, a]``, no state term."""
    mdp, spec = config.load_mdp()
    runs, checks = [], {}
    for i, alpha in enumerate(config.alphas, start=1):
        action = MarginalPenalty("action", _eta(alpha), config.epsilon2 or None)
        record = _solve(config, f"eta_{i}", mdp, spec, action=action)
        runs.append(record)
        if action.kind == "hard":
            gap = np.abs(action.marginal(record.mu) - action.target).max()
            checks[f"{record.name}/marginal_within_tol"] = gap <= MARGINAL_CHECK_TOL
    return _finish(config, runs, checks, {r.name: mdp for r in runs}, out)


def run_rho_sweep(config, out=None):
    """State-marginal sweep concentrating ``rho'`` on each target cell in turn."""
    mdp, spec = config.load_mdp()
    baseline = _solve(config, "unconstrained", mdp, spec)
    runs, checks = [baseline], {}
    rho_free = baseline.mu.sum(axis=1)
    for i, cell in enumerate(config.target_cells, start=1):
        try:
            s = spec.state_index(cell)
        except ValueError as exc:
            raise ConfigError(f"target cell {cell} is not a state of the grid") from exc
        target = _concentrated(mdp.n_states, s, config.concentration)
        state = MarginalPenalty("state", target, _state_weight(config))
        record = _solve(config, f"rho_{i}", mdp, spec, state=state)
        runs.append(record)
        rho = record.mu.sum(axis=1)
        checks[f"{record.name}/residual_above_floor"] = state.residual(record.mu) > RESIDUAL_FLOOR
        checks[f"{record.name}/target_mass_increased"] = rho[s] > rho_free[s]
    return _finish(config, runs, checks, {r.name: mdp for r in runs}, out)


def run_imitate(config, out=None):
    """Imitate the risk-averse policy on the standard grid through its marginals."""
    risk, risk_spec = config.load_mdp("gridworld_risk")
    std, std_spec = config.load_mdp("gridworld")
    step1 = _solve(config, "step1_source", risk, risk_spec)
    eta1 = step1.mu.sum(axis=0)
    rho1 = step1.mu.sum(axis=1)
    action = MarginalPenalty("action", eta1, config.epsilon2 or None)
    step2a = _solve(config, "step2a_action", std, std_spec, action=action)
    state = MarginalPenalty("state", rho1, _state_weight(config))
    step2b = _solve(config, "step2b_state", std, std_spec, state=state)
    # compare on the standard grid's glyphs so terminal signs do not differ
    source_render = render_policy(step1.policy, std_spec)
    checks = {
        "eta1_is_distribution": abs(eta1.sum() - 1.0) <= 1e-9,
        "step2a_action/marginal_within_tol":
            np.abs(eta1 - step2a.mu.sum(axis=0)).max() <= MARGINAL_CHECK_TOL,
        "step2a_action/differs_from_source": step2a.render != source_render,
        "step2b_state/matches_source": step2b.render == source_render,
    }
    runs = [step1, step2a, step2b]
    mdps = {"step1_source": risk, "step2a_action": std, "step2b_state": std}
    return _finish(config, runs, checks, mdps, out)


def run_no_up(config, out=None):
    """Forbid "up" through the action marginal, then add a pull towards (0, 2)."""
    mdp, spec = config.load_mdp()
    alpha = (1.0 - E_MINUS_10) / 3.0
    eta = np.array([E_MINUS_10, alpha, alpha, alpha])
    up = ACTIONS.index("up")
    s = spec.state_index((0, 2))
    action = MarginalPenalty("action", eta, config.epsilon2 or None)
    state = MarginalPenalty("state", _concentrated(mdp.n_states, s, config.concentration),
                            _state_weight(config))
    only = _solve(config, "eta_only", mdp, spec, action=action)
    joint = _solve(config, "eta_and_rho", mdp, spec, state=state, action=action)
    checks = {}
    for record in (only, joint):
        checks[f"{record.name}/up_mass_bounded"] = record.mu.sum(axis=0)[up] <= 2 * E_MINUS_10
    checks["eta_and_rho/target_mass_increased"] = joint.mu.sum(axis=1)[s] > only.mu.sum(axis=1)[s]
    return _finish(config, [only, joint], checks, {r.name: mdp for r in (only, joint)}, out)


_RUNNERS = {
    "solve": run_solve,
    "eta_sweep": run_eta_sweep,
    "rho_sweep": run_rho_sweep,
    "imitate": run_imitate,
    "no_up": run_no_up,
}


def run_experiment(config, out=None):
    """Dispatch on ``config.experiment``."""
    return _RUNNERS[config.experiment](config, out)
