"""Acceptance criteria 1-9.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion
is printed in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import itertools
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from conftest import random_mdp, random_policy  # noqa: E402
from dcpo import (  # noqa: E402
    E_MINUS_10,
    GridSpec,
    MarginalPenalty,
    Mdp,
    OccupancyConstraint,
    StopRule,
    build_gridworld,
    dual_gradient,
    dual_objective,
    dykstra_kl,
    expected_return,
    flow_residual,
    iterate_outer,
    kl_decomposition,
    kl_divergence,
    occupancy_from_policy,
    policy_from_occupancy,
    project_onto_delta,
    prox_hard_action,
    prox_hard_state,
    prox_kl_action,
    prox_kl_state,
    render_policy,
    soft_value_iteration_oracle,
)
from dcpo.experiments import (  # noqa: E402
    ExperimentConfig,
    run_eta_sweep,
    run_imitate,
    run_rho_sweep,
)
from dcpo.mdp import greedy_actions  # noqa: E402

SPEC = GridSpec()
UP, DOWN, LEFT, RIGHT = range(4)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def _scaling_oracle(K, a, b, n_steps):
    u, v = np.ones(K.shape[0]), np.ones(K.shape[1])
    plans = []
    for k in range(n_steps):
        if k % 2 == 0:
            u = a / (K @ v)
        else:
            v = b / (K.T @ u)
        plans.append(u[:, None] * K * v[None, :])
    return plans


def test_criterion_1_sinkhorn_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    with Timer() as t:
        for _ in range(20):
            n, m = rng.integers(3, 6, size=2)
            K = rng.uniform(0.05, 1.0, size=(n, m))
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
            steps = []
            dykstra_kl(np.log(K), [MarginalPenalty("state", a), MarginalPenalty("action", b)],
                       StopRule(frobenius_tol=0.0, max_sweeps=25, marginal_tol=None),
                       callback=lambda l, log_mu: steps.append(np.exp(log_mu)))
            for got, want in zip(steps, _scaling_oracle(K, a, b, len(steps)), strict=True):
                worst = max(worst, np.abs(got - want).max())
    assert worst <= 1e-12, worst
    assert t.elapsed < 1.0, t.elapsed


def test_criterion_2_dual_projection():
    rng = np.random.default_rng(7)
    h = 1e-5
    with Timer() as t:
        for _ in range(50):
            mdp = random_mdp(rng, rng.integers(2, 6), rng.integers(2, 4))
            log_mu = rng.normal(size=mdp.shape)
            v = rng.normal(size=mdp.n_states)
            g = dual_gradient(mdp, log_mu, v)
            fd = np.array([(dual_objective(mdp, log_mu, v + h * e)
                            - dual_objective(mdp, log_mu, v - h * e)) / (2 * h)
                           for e in np.eye(mdp.n_states)])
            assert np.abs(fd - g).max() <= 1e-6 * max(1.0, np.abs(g).max())

            occ, state = project_onto_delta(mdp, log_mu)
            assert state.converged
            assert np.abs(flow_residual(occ.mu, mdp)).max() <= 1e-8
            mu = np.exp(log_mu)
            best = kl_divergence(occ.mu, mu)
            for _ in range(100):
                other = occupancy_from_policy(mdp, random_policy(rng, *mdp.shape)).mu
                assert best <= kl_divergence(other, mu)
    assert t.elapsed < 10.0, t.elapsed


def _policy_grid_optimum(mdp, eps, step=1e-3):
    t = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    A, B = np.meshgrid(t, t, indexing="ij")
    pi = np.stack([np.stack([A, 1 - A], -1), np.stack([B, 1 - B], -1)], -2)
    P_pi = np.einsum("...sa,sat->...st", pi, mdp.transition)
    M = np.eye(2) - mdp.gamma * np.swapaxes(P_pi, -1, -2)
    rhs = np.broadcast_to((1 - mdp.gamma) * mdp.p0, M.shape[:-1])[..., None]
    rho = np.linalg.solve(M, rhs)[..., 0]
    mu = rho[..., None] * pi
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_entropy = np.where(mu > 0, mu * np.log(mu), 0.0).sum(axis=(-1, -2))
    return ((mu * mdp.reward).sum(axis=(-1, -2)) - eps * neg_entropy).max()


def test_criterion_3_entropy_regularized_optimum():
    rng = np.random.default_rng(11)
    with Timer() as t:
        for _ in range(10):
            P = rng.dirichlet(np.ones(2), size=(2, 2))
            r = rng.uniform(0.0, 1.0, size=(2, 2))
            eps = rng.uniform(0.5, 1.0)
            mdp = Mdp(P, r, 0.9, rng.dirichlet(np.ones(2)))
            occ, _ = project_onto_delta(mdp, r / eps, tol=1e-12)
            mu = occ.mu
            value = (mu * r).sum() - eps * (mu * np.log(mu)).sum()
            oracle = _policy_grid_optimum(mdp, eps)
            assert value >= oracle - 1e-12
            assert value - oracle <= 1e-6, value - oracle
    assert t.elapsed < 30.0, t.elapsed


def test_criterion_4_unconstrained_gridworld():
    mdp = build_gridworld()
    with Timer() as t:
        occ, state = project_onto_delta(mdp, mdp.reward / 0.01)
    policy = policy_from_occupancy(occ.mu)
    assert state.converged
    assert DOWN not in greedy_actions(policy)
    np.testing.assert_array_equal(greedy_actions(policy),
                                  greedy_actions(soft_value_iteration_oracle(mdp)))
    assert "↓" not in render_policy(policy)
    assert t.elapsed < 5.0, t.elapsed


def test_criterion_5_action_marginal_sweep(tmp_path):
    with Timer() as t:
        result = run_eta_sweep(ExperimentConfig(experiment="eta_sweep"), out=tmp_path)
    s02, s23 = SPEC.state_index((0, 2)), SPEC.state_index((2, 3))
    acts = {r.name: greedy_actions(r.policy) for r in result.runs}
    assert acts["eta_1"][s02] == DOWN
    assert acts["eta_2"][s02] == RIGHT
    assert acts["eta_7"][s23] == UP
    assert len(result.runs) == 7
    for record, alpha in zip(result.runs, ExperimentConfig().alphas, strict=True):
        eta = np.array([alpha, 0.5 - alpha, 0.5 - alpha, alpha])
        assert record.report.converged
        assert np.abs(record.mu.sum(axis=0) - eta).max() <= 1e-5
    assert t.elapsed < 60.0, t.elapsed


def test_criterion_6_state_marginal_sweep(tmp_path):
    with Timer() as t:
        result = run_rho_sweep(ExperimentConfig(experiment="rho_sweep"), out=tmp_path)
    runs = [r for r in result.runs if r.name.startswith("rho_")]
    assert len(runs) == 3
    for record in runs:
        assert record.report.converged
        assert record.report.residual_curves["kl_state"][-1] > 1e-3
    assert t.elapsed < 60.0, t.elapsed


def test_criterion_7_imitation(tmp_path):
    with Timer() as t:
        result = run_imitate(ExperimentConfig(experiment="imitate"), out=tmp_path)
    source = result.run("step1_source")
    eta1 = source.mu.sum(axis=0)
    step2a, step2b = result.run("step2a_action"), result.run("step2b_state")
    source_render = render_policy(source.policy)
    assert np.abs(step2a.mu.sum(axis=0) - eta1).max() <= 1e-5
    assert step2a.render != source_render
    assert step2b.render == source_render
    assert t.elapsed < 60.0, t.elapsed


def test_criterion_8_monotone_outer_loop():
    with Timer() as t:
        grid = build_gridworld()
        returns = [r.expected_return for r in iterate_outer(grid, k_max=20)]
        assert len(returns) == 20
        assert (np.diff(returns) >= -1e-8).all()
        rng = np.random.default_rng(3)
        for _ in range(5):
            mdp = random_mdp(rng, 2, 2, gamma=0.9, p0=np.array([0.5, 0.5]))
            traj = iterate_outer(mdp, k_max=50, tol=1e-10)
            values = np.array([r.expected_return for r in traj])
            assert (np.diff(values) >= -1e-8).all()
            best = max(expected_return(occupancy_from_policy(mdp, np.eye(2)[[a, b]]), mdp)
                       for a in range(2) for b in range(2))
            assert abs(values[-1] - best) <= 1e-4
    assert t.elapsed < 60.0, t.elapsed


def test_criterion_9_invariant_suites():
    rng = np.random.default_rng(5)
    for _ in range(30):
        mdp = random_mdp(rng, rng.integers(1, 6), rng.integers(1, 4))
        # bijection between positive policies and occupancy measures
        pi = random_policy(rng, *mdp.shape, floor=1e-3)
        mu = occupancy_from_policy(mdp, pi).mu
        assert np.abs(policy_from_occupancy(mu) - pi).max() <= 1e-9
        # KL decomposition into state and conditional terms
        other = occupancy_from_policy(mdp, random_policy(rng, *mdp.shape, floor=1e-3)).mu
        s, c = kl_decomposition(mu, other)
        assert abs(s + c - kl_divergence(mu, other)) <= 1e-10
        # dual shift invariance
        log_mu = rng.normal(size=mdp.shape)
        v = rng.normal(size=mdp.n_states)
        assert abs(dual_objective(mdp, log_mu, v + 3.0) - dual_objective(mdp, log_mu, v)) <= 1e-10

    for _ in range(30):
        x = rng.uniform(0.01, 1.0, size=tuple(rng.integers(1, 6, size=2)))
        rho_t = rng.uniform(0.01, 1.0, size=x.shape[0])
        eta_t = rng.uniform(0.01, 1.0, size=x.shape[1])
        eps = rng.uniform(0.1, 10.0)
        # prox first-order conditions
        out = prox_kl_state(x, rho_t, eps)
        cond = np.log(out / x) + eps * np.log(out.sum(axis=1) / rho_t)[:, None]
        assert np.abs(cond).max() <= 1e-8
        out = prox_kl_action(x, eta_t, eps)
        cond = np.log(out / x) + eps * np.log(out.sum(axis=0) / eta_t)[None, :]
        assert np.abs(cond).max() <= 1e-8
        # hard-prox idempotence
        once = prox_hard_state(x, rho_t)
        assert np.array_equal(prox_hard_state(once, rho_t), once)
        once = prox_hard_action(x, eta_t)
        assert np.array_equal(prox_hard_action(once, eta_t), once)

    # Dykstra order insensitivity on feasible instances
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        mdp = random_mdp(rng, 4, 3)
        rho_t, eta_t = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(3))
        finals = []
        for order in itertools.permutations(range(3)):
            cs = [MarginalPenalty("state", rho_t, 2.0), MarginalPenalty("action", eta_t, 5.0),
                  OccupancyConstraint(mdp)]
            occ, state = dykstra_kl(mdp.reward / 0.3, [cs[i] for i in order], StopRule())
            assert state.converged
            finals.append(occ.mu)
        assert max(np.abs(f - finals[0]).max() for f in finals) <= 1e-4


CRITERIA = [
    (1, "Sinkhorn equivalence", test_criterion_1_sinkhorn_equivalence),
    (2, "dual projection correctness", test_criterion_2_dual_projection),
    (3, "entropy-regularized optimum", test_criterion_3_entropy_regularized_optimum),
    (4, "unconstrained gridworld policy", test_criterion_4_unconstrained_gridworld),
    (5, "action-marginal sweep", test_criterion_5_action_marginal_sweep),
    (6, "state-marginal sweep", test_criterion_6_state_marginal_sweep),
    (7, "imitation through marginals", test_criterion_7_imitation),
    (8, "monotone outer loop", test_criterion_8_monotone_outer_loop),
    (9, "invariant suites", test_criterion_9_invariant_suites),
]


def main():
    failures = 0
    for number, title, fn in CRITERIA:
        kwargs = {}
        tmp = None
        if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
            tmp = tempfile.TemporaryDirectory()
            kwargs["tmp_path"] = Path(tmp.name)
        try:
            fn(**kwargs)
            print(f"criterion {number} ({title}): PASS")
        except AssertionError as exc:
            failures += 1
            print(f"criterion {number} ({title}): FAIL {exc}")
        finally:
            if tmp is not None:
                tmp.cleanup()
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
