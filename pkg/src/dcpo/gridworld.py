"""The 3x4 slippery gridworld and a text renderer for its policies.

Cells are ``(row, col)`` with row 0 at the top.  The start cell is the
bottom-left corner ``(2, 0)``; ``(0, 3)`` and ``(1, 3)`` are terminal and send
every action back to the start.  Rewards are paid on entering a cell and are
converted to ``r(s, a)`` by taking the expectation over the next cell.
"""

from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp, greedy_actions

ACTIONS = ("up", "down", "left", "right")
ARROWS = ("↑", "↓", "←", "→")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}
_PERPENDICULAR = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}


@dataclass(frozen=True)
class GridSpec:
    rows: int = 3
    cols: int = 4
    blocked: frozenset = frozenset({(1, 1)})
    terminal: tuple = ((0, 3), (1, 3))
    start: tuple = (2, 0)
    slip: float = 0.1
    gamma: float = 0.95
    entry_reward: dict = field(default_factory=lambda: {(0, 3): 1.0, (1, 3): -1.0})

    @property
    def cells(self):
        """Non-blocked cells in row-major order; position ``i`` is state ``i``."""
        return [(r, c) for r in range(self.rows) for c in range(self.cols)
                if (r, c) not in self.blocked]

    def state_index(self, cell):
        return self.cells.index(tuple(cell))


def risk_averse_spec():
    return GridSpec(entry_reward={(0, 3): 1.0, (1, 3): -10.0})


def _spec_for(variant):
    if isinstance(variant, GridSpec):
        return variant
    if variant == "standard":
        return GridSpec()
    if variant == "risk_averse":
        return risk_averse_spec()
    raise ValueError(f"unknown gridworld variant {variant!r}")


def _step(spec, cell, move):
    r, c = cell[0] + move[0], cell[1] + move[1]
    if not (0 <= r < spec.rows and 0 <= c < spec.cols) or (r, c) in spec.blocked:
        return cell
    return (r, c)


def build_gridworld(variant="standard"):
    """Build the gridworld MDP (``"standard"``, ``"risk_averse"`` or a GridSpec)."""
    spec = _spec_for(variant)
    cells = spec.cells
    index = {cell: i for i, cell in enumerate(cells)}
    n_states, n_actions = len(cells), len(ACTIONS)
    P = np.zeros((n_states, n_actions, n_states))
    for s, cell in enumerate(cells):
        for a in range(n_actions):
            if cell in spec.terminal:
                P[s, a, index[spec.start]] = 1.0
                continue
            P[s, a, index[_step(spec, cell, _MOVES[a])]] += 1.0 - 2 * spec.slip
            for b in _PERPENDICULAR[a]:
                P[s, a, index[_step(spec, cell, _MOVES[b])]] += spec.slip
    entry = np.array([spec.entry_reward.get(cell, 0.0) for cell in cells])
    reward = P @ entry
    p0 = np.zeros(n_states)
    p0[index[spec.start]] = 1.0
    return Mdp(P, reward, spec.gamma, p0,
               state_labels=[f"({r},{c})" for r, c in cells],
               action_labels=ACTIONS)


def render_policy(policy, spec=None, atol=1e-9):
    """Text grid of per-cell argmax arrows.

    Blocked cells print ``#`` and terminal cells print the sign of their entry
    reward.  Ties (within ``atol``) go to the first action in ``ACTIONS``.
    """
    spec = _spec_for("standard" if spec is None else spec)
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (len(spec.cells), len(ACTIONS)):
        raise ValueError(f"policy shape {policy.shape} does not match the grid")
    best = greedy_actions(policy, atol=atol)
    lines = []
    for r in range(spec.rows):
        row = []
        for c in range(spec.cols):
            if (r, c) in spec.blocked:
                row.append("#")
            elif (r, c) in spec.terminal:
                value = spec.entry_reward.get((r, c), 0.0)
                row.append("+" if value > 0 else "-" if value < 0 else "0")
            else:
                row.append(ARROWS[best[spec.state_index((r, c))]])
        lines.append(" ".join(row))
    return "\n".join(lines)
