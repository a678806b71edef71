"""Dykstra's algorithm for KL objectives, in log domain.

Minimizes ``KL(mu | xi) + sum_i phi_i(mu)`` by cycling through the KL
proximal maps of the ``phi_i`` with one multiplicative correction ``z_i``
per constraint::

    mu <- prox_i(mu * z_i)
    z_i <- z_i * mu_before / mu_after

Everything is stored as logs, with ``-inf`` for exact zeros.  Every prox used
here rescales entries, so an entry that reaches zero stays zero and its
correction is irrelevant (``0 / 0`` is taken as 1).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._validation import DegenerateInputError, check_array, check_log_matrix, safe_log
from .mdp import OccupancyMeasure

__all__ = [
    "StopRule",
    "DykstraState",
    "DykstraProxError",
    "dykstra_kl",
    "sinkhorn",
]


@dataclass(frozen=True)
class StopRule:
    """Convergence test applied after every full sweep.

    A run has converged when the Frobenius norm between the iterates at the
    end of two consecutive sweeps is below ``frobenius_tol`` and, if
    ``marginal_tol`` is not None, every hard marginal constraint is met to
    ``marginal_tol`` in sup-norm.  The second test matters because Dykstra
    contracts slowly near a hard marginal: a small sweep-to-sweep change can
    still leave a residual an order of magnitude larger.

    ``track`` optionally names extra ``(label, axis, target)`` marginals whose
    Euclidean residual is recorded each sweep.
    """

    frobenius_tol: float = 1e-5
    max_sweeps: int = 5000
    marginal_tol: float = 1e-5
    track: tuple = ()


class DykstraProxError(DegenerateInputError):
    """A constraint's prox failed; carries the index and the state reached."""

    def __init__(self, message, constraint_index, sweep, state):
        super().__init__(message)
        self.constraint_index = constraint_index
        self.sweep = sweep
        self.state = state


@dataclass
class DykstraState:
    log_xi: np.ndarray
    log_mu: np.ndarray
    log_z: list
    l: int = 0
    sweeps: int = 0
    converged: bool = False
    deltas: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)

    @property
    def mu(self):
        return np.exp(self.log_mu)

    def telescoping_gap(self):
        """Max deviation from ``log mu = log xi - sum_i log z_i`` on live entries."""
        live = np.isfinite(self.log_mu)
        if not live.any():
            return 0.0
        total = np.sum(self.log_z, axis=0)
        gap = self.log_mu[live] - (self.log_xi[live] - total[live])
        return float(np.abs(gap).max())


def _log_ratio(log_in, log_out):
    out = np.zeros_like(log_in)
    live = np.isfinite(log_out)
    out[live] = log_in[live] - log_out[live]
    return out


def _feasible(mu, hard, tol):
    if tol is None:
        return True
    for axis, target in hard:
        marginal = mu.sum(axis=1) if axis == "state" else mu.sum(axis=0)
        if np.abs(marginal - target).max() > tol:
            return False
    return True


def _constraint_label(c, i):
    return getattr(c, "name", None) or f"constraint_{i}"


def _residual_targets(constraints, stop):
    targets = []
    for i, c in enumerate(constraints):
        if getattr(c, "axis", None) in ("state", "action"):
            targets.append((_constraint_label(c, i), c.axis, np.asarray(c.target)))
    for label, axis, target in stop.track:
        targets.append((label, axis, np.asarray(target, dtype=float)))
    return targets


def dykstra_kl(log_xi, constraints, stop=None, callback=None):
    """Run KL Dykstra from ``mu = xi`` over an ordered list of constraints.

    Parameters
    ----------
    log_xi : array of shape (n, m)
        Log of the reference measure.
    constraints : sequence
        Objects with a ``log_prox(log_mu) -> log_mu`` method, applied
        cyclically in the given order.
    stop : StopRule, optional
    callback : callable, optional
        Called as ``callback(l, log_mu)`` after every single prox step.

    Returns
    -------
    occupancy : OccupancyMeasure
        Final iterate; marked normalized when it sums to one.
    state : DykstraState
        ``state.converged`` is False when the sweep cap was hit.

    Raises
    ------
    DykstraProxError
        If a prox cannot be evaluated (e.g. an infeasible hard marginal).
    """
    stop = StopRule() if stop is None else stop
    log_xi = check_log_matrix(log_xi)
    constraints = list(constraints)
    if not constraints:
        raise ValueError("at least one constraint is required")
    n = len(constraints)
    state = DykstraState(log_xi=log_xi.copy(), log_mu=log_xi.copy(),
                         log_z=[np.zeros_like(log_xi) for _ in range(n)])
    targets = _residual_targets(constraints, stop)
    state.residuals = {label: [] for label, _, _ in targets}
    hard = [(c.axis, np.asarray(c.target)) for c in constraints
            if getattr(c, "kind", None) == "hard"]

    prev = np.exp(state.log_mu)
    for sweep in range(1, stop.max_sweeps + 1):
        for i, c in enumerate(constraints):
            log_in = state.log_mu + state.log_z[i]
            try:
                log_out = c.log_prox(log_in)
            except (ValueError, ArithmeticError) as exc:
                state.sweeps = sweep - 1
                raise DykstraProxError(
                    f"prox of constraint {i} ({_constraint_label(c, i)}) failed "
                    f"in sweep {sweep}: {exc}", i, sweep, state) from exc
            if np.isnan(log_out).any() or np.isposinf(log_out).any():
                state.sweeps = sweep - 1
                raise DykstraProxError(
                    f"prox of constraint {i} returned non-finite mass in sweep {sweep}",
                    i, sweep, state)
            state.log_z[i] = _log_ratio(log_in, log_out)
            state.log_mu = log_out
            state.l += 1
            if callback is not None:
                callback(state.l, log_out)

        mu = np.exp(state.log_mu)
        delta = float(np.linalg.norm(mu - prev))
        prev = mu
        state.deltas.append(delta)
        state.sweeps = sweep
        for label, axis, target in targets:
            marginal = mu.sum(axis=1) if axis == "state" else mu.sum(axis=0)
            state.residuals[label].append(float(np.linalg.norm(marginal - target)))
        if delta < stop.frobenius_tol and _feasible(mu, hard, stop.marginal_tol):
            state.converged = True
            break

    total = float(np.exp(state.log_mu).sum())
    occ = OccupancyMeasure(state.log_mu, normalized=abs(total - 1.0) <= 1e-9)
    return occ, state


def sinkhorn(log_xi, a, b, tol=1e-9, max_iter=100_000):
    """Entropic OT plan by alternating log-domain row and column scaling.

    Returns the matrix ``diag(u) xi diag(v)`` whose row sums are ``a`` and
    column sums are ``b`` (to ``tol`` in sup-norm).
    """
    log_xi = check_log_matrix(log_xi)
    a = check_array(a, ndim=1, name="a")
    b = check_array(b, ndim=1, name="b")
    if a.shape[0] != log_xi.shape[0] or b.shape[0] != log_xi.shape[1]:
        raise ValueError("marginal lengths do not match the kernel shape")
    if (a <= 0).any() or (b <= 0).any():
        raise ValueError("sinkhorn marginals must be strictly positive")
    if abs(a.sum() - b.sum()) > 1e-12 * max(a.sum(), b.sum()):
        raise ValueError(f"marginals carry different mass: {a.sum()!r} vs {b.sum()!r}")
    log_a, log_b = safe_log(a), safe_log(b)
    f = np.zeros(log_xi.shape[0])
    g = np.zeros(log_xi.shape[1])
    with np.errstate(divide="ignore"):
        for _ in range(max_iter):
            f = log_a - logsumexp(log_xi + g[None, :], axis=1)
            g = log_b - logsumexp(log_xi + f[:, None], axis=0)
            plan = np.exp(log_xi + f[:, None] + g[None, :])
            if np.abs(plan.sum(axis=1) - a).max() <= tol:
                return plan
    raise RuntimeError(f"sinkhorn did not reach tol={tol} in {max_iter} iterations")
