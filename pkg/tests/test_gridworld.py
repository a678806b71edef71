import numpy as np
import pytest

from conftest import random_policy
from dcpo import (
    ACTIONS,
    GridSpec,
    build_gridworld,
    occupancy_from_policy,
    render_policy,
    soft_value_iteration_oracle,
)

SPEC = GridSpec()
UP, DOWN, LEFT, RIGHT = range(4)


def s(cell):
    return SPEC.state_index(cell)


def test_layout():
    mdp = build_gridworld()
    assert mdp.shape == (11, 4)
    assert mdp.gamma == 0.95
    assert (1, 1) not in SPEC.cells
    assert mdp.p0[s((2, 0))] == 1.0
    assert mdp.state_labels[s((0, 3))] == "(0,3)"


def test_slip_and_wall_bounce_from_start():
    P = build_gridworld().transition
    row = P[s((2, 0)), UP]
    assert row[s((1, 0))] == pytest.approx(0.8)
    assert row[s((2, 0))] == pytest.approx(0.1)
    assert row[s((2, 1))] == pytest.approx(0.1)
    assert row.sum() == pytest.approx(1.0)


def test_block_bounces():
    P = build_gridworld().transition
    # moving right from (1,0) hits the block and stays
    assert P[s((1, 0)), RIGHT, s((1, 0))] == pytest.approx(0.8)


def test_terminals_reset_to_start():
    P = build_gridworld().transition
    for cell in SPEC.terminal:
        np.testing.assert_array_equal(P[s(cell), :, s((2, 0))], 1.0)


def test_entry_reward_expectation():
    r = build_gridworld().reward
    assert r[s((0, 2)), RIGHT] == pytest.approx(0.8)
    # up from (1,2) slips right into the -1 cell w.p. .1
    assert r[s((1, 2)), RIGHT] == pytest.approx(-0.8)
    assert r[s((1, 2)), UP] == pytest.approx(-0.1)


def test_reward_support():
    mdp = build_gridworld()
    targets = [s((0, 3)), s((1, 3))]
    can_enter = (mdp.transition[:, :, targets] > 0).any(axis=2)
    nonzero = mdp.reward != 0
    assert not (nonzero & ~can_enter).any()
    # terminals reset, so their own rows carry no reward
    assert not nonzero[targets].any()


def test_variants_differ_only_where_minus_one_is_reachable():
    std, risk = build_gridworld(), build_gridworld("risk_averse")
    np.testing.assert_array_equal(std.transition, risk.transition)
    touches = std.transition[:, :, s((1, 3))] > 0
    diff = std.reward != risk.reward
    assert diff.any()
    assert not (diff & ~touches).any()
    np.testing.assert_allclose(risk.reward[touches], std.reward[touches]
                               + 9 * -std.transition[:, :, s((1, 3))][touches])


def test_start_state_always_revisited():
    mdp = build_gridworld()
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu = occupancy_from_policy(mdp, random_policy(rng, 11, 4))
        assert mu.state_marginal[s((2, 0))] > 0


def test_oracle_policy_has_no_down_move():
    text = render_policy(soft_value_iteration_oracle(build_gridworld()))
    assert "↓" not in text
    assert text == "→ → → +\n↑ # ↑ -\n↑ → ↑ ←"


def test_risk_averse_oracle_policy():
    mdp = build_gridworld("risk_averse")
    text = render_policy(soft_value_iteration_oracle(mdp), "risk_averse")
    assert text == "→ → → +\n↑ # ← -\n↑ ← ← ↓"


def test_render_shape_and_ties():
    text = render_policy(np.full((11, 4), 0.25))
    rows = text.split("\n")
    assert len(rows) == 3 and all(len(r.split(" ")) == 4 for r in rows)
    assert rows[1].split(" ")[1] == "#"
    # exact ties go to the first action
    assert rows[2] == "↑ ↑ ↑ ↑"
    with pytest.raises(ValueError):
        render_policy(np.full((10, 4), 0.25))


def test_unknown_variant():
    with pytest.raises(ValueError):
        build_gridworld("windy")


def test_actions_order():
    assert ACTIONS == ("up", "down", "left", "right")
