"""Closed-form KL proximal operators for marginal penalties.

A penalty on the state marginal ``mu 1`` (or the action marginal ``mu^T 1``)
has a KL proximal map that rescales rows (columns) of ``mu`` so that the
marginal moves to the prox of the vector penalty:

* KL penalty ``eps * KL(m | target)``: new marginal ``(m * target**eps)**(1/(1+eps))``
* hard constraint ``m == target``: new marginal ``target``

The ``log_*`` functions work on log-domain matrices (``-inf`` for exact zeros)
and are what the Dykstra loop calls; the others are linear-domain wrappers.
"""

import numpy as np
from scipy.special import logsumexp

from ._validation import (
    DegenerateInputError,
    check_array,
    check_nonnegative_matrix,
    check_positive,
    safe_log,
)
from .mdp import kl_divergence

__all__ = [
    "InfeasibleProjectionError",
    "MarginalPenalty",
    "prox_kl_state",
    "prox_kl_action",
    "prox_hard_state",
    "prox_hard_action",
    "log_prox_kl_rows",
    "log_prox_hard_rows",
]

AXES = ("state", "action")


class InfeasibleProjectionError(DegenerateInputError):
    """A hard marginal asks for mass on a row/column that is identically zero."""


def _row_lse(log_mu):
    with np.errstate(divide="ignore"):
        return logsumexp(log_mu, axis=1)


def _summation_slack(n_cols):
    # relative error of a row sum; rows already on target within it are left alone
    return 4.0 * max(n_cols, 1) * np.finfo(float).eps


def _scale_rows(log_mu, log_scale):
    out = log_mu + log_scale[:, None]
    # a dead row stays dead whatever the scale
    out[np.isneginf(log_mu)] = -np.inf
    return out


def log_prox_kl_rows(log_mu, log_target, epsilon):
    """Row-rescaling prox of ``epsilon * KL(mu 1 | target)`` in log domain."""
    log_rho = _row_lse(log_mu)
    if (np.isneginf(log_rho) & np.isfinite(log_target)).any():
        raise DegenerateInputError(
            "a row with zero mass cannot be moved toward a positive target")
    w = epsilon / (1.0 + epsilon)
    live = np.isfinite(log_rho)
    log_scale = np.zeros_like(log_rho)
    # zero target entries force the row to zero (limit of target -> 0)
    log_scale[live] = w * (log_target[live] - log_rho[live])
    return _scale_rows(log_mu, log_scale)


def log_prox_hard_rows(log_mu, log_target):
    """Row-rescaling projection onto ``{mu : mu 1 = target}`` in log domain."""
    log_rho = _row_lse(log_mu)
    bad = np.isneginf(log_rho) & np.isfinite(log_target)
    if bad.any():
        rows = np.flatnonzero(bad).tolist()
        raise InfeasibleProjectionError(
            f"rows {rows} carry no mass but the target asks for some")
    live = np.isfinite(log_rho)
    log_scale = np.zeros_like(log_rho)
    log_scale[live] = log_target[live] - log_rho[live]
    log_scale[np.abs(log_scale) <= _summation_slack(log_mu.shape[1])] = 0.0
    return _scale_rows(log_mu, log_scale)


def _check_inputs(mu, target, axis_len, name):
    mu = check_nonnegative_matrix(mu)
    target = check_array(target, ndim=1, name=name)
    if target.shape[0] != mu.shape[axis_len]:
        raise ValueError(f"{name} has length {target.shape[0]}, expected {mu.shape[axis_len]}")
    if (target < 0).any():
        raise ValueError(f"{name} has negative entries")
    return mu, target


def prox_kl_state(mu, rho_prime, epsilon1):
    """KL prox of ``epsilon1 * KL(mu 1 | rho_prime)``: rescale each state row."""
    mu, rho_prime = _check_inputs(mu, rho_prime, 0, "rho_prime")
    epsilon1 = check_positive(epsilon1, "epsilon1")
    return np.exp(log_prox_kl_rows(safe_log(mu), safe_log(rho_prime), epsilon1))


def prox_kl_action(mu, eta_prime, epsilon2):
    """KL prox of ``epsilon2 * KL(mu^T 1 | eta_prime)``: rescale each action column."""
    mu, eta_prime = _check_inputs(mu, eta_prime, 1, "eta_prime")
    epsilon2 = check_positive(epsilon2, "epsilon2")
    return np.exp(log_prox_kl_rows(safe_log(mu.T), safe_log(eta_prime), epsilon2)).T


def _hard_rows(mu, target):
    rho = mu.sum(axis=1)
    bad = (rho <= 0) & (target > 0)
    if bad.any():
        raise InfeasibleProjectionError(
            f"rows {np.flatnonzero(bad).tolist()} carry no mass but the target asks for some")
    scale = np.zeros_like(rho)
    np.divide(target, rho, out=scale, where=rho > 0)
    scale[np.abs(scale - 1.0) <= _summation_slack(mu.shape[1])] = 1.0
    return mu * scale[:, None]


def prox_hard_state(mu, rho_prime):
    """Projection onto ``{mu : mu 1 = rho_prime}`` by exact row scaling."""
    mu, rho_prime = _check_inputs(mu, rho_prime, 0, "rho_prime")
    return _hard_rows(mu, rho_prime)


def prox_hard_action(mu, eta_prime):
    """Projection onto ``{mu : mu^T 1 = eta_prime}`` by exact column scaling."""
    mu, eta_prime = _check_inputs(mu, eta_prime, 1, "eta_prime")
    return _hard_rows(mu.T, eta_prime).T


class MarginalPenalty:
    """A KL penalty or hard constraint on the state or action marginal.

    Parameters
    ----------
    axis : {"state", "action"}
    target : array-like
        Nonnegative target marginal (``rho'`` over states, ``eta'`` over
        actions).  A zero entry pins that marginal entry to zero.
    epsilon : float or None
        Penalty weight of ``epsilon * KL(marginal | target)``.  ``None`` (or
        ``inf``) gives the hard constraint ``marginal == target``.
    """

    def __init__(self, axis, target, epsilon=None):
        if axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
        target = check_array(target, ndim=1, name="target")
        if (target < 0).any():
            raise ValueError("target has negative entries")
        if epsilon is not None and np.isinf(epsilon):
            epsilon = None
        if epsilon is not None:
            epsilon = check_positive(epsilon, "epsilon")
        self.axis = axis
        self.target = target
        self.log_target = safe_log(target)
        self.epsilon = epsilon

    @property
    def kind(self):
        return "hard" if self.epsilon is None else "kl"

    @property
    def name(self):
        return f"{self.kind}_{self.axis}"

    def __repr__(self):
        eps = "" if self.epsilon is None else f", epsilon={self.epsilon!r}"
        return f"MarginalPenalty({self.axis!r}, target={self.target.tolist()!r}{eps})"

    def log_prox(self, log_mu):
        rows = log_mu if self.axis == "state" else log_mu.T
        if rows.shape[0] != self.target.shape[0]:
            raise ValueError(
                f"{self.axis} target has length {self.target.shape[0]}, "
                f"iterate has {rows.shape[0]}")
        if self.epsilon is None:
            out = log_prox_hard_rows(rows, self.log_target)
        else:
            out = log_prox_kl_rows(rows, self.log_target, self.epsilon)
        return out if self.axis == "state" else out.T

    def prox(self, mu):
        return np.exp(self.log_prox(safe_log(check_nonnegative_matrix(mu))))

    def marginal(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu.sum(axis=1) if self.axis == "state" else mu.sum(axis=0)

    def residual(self, mu):
        """Euclidean distance between the constrained marginal and the target."""
        return float(np.linalg.norm(self.marginal(mu) - self.target))

    def penalty(self, mu):
        """Value of the penalty term at ``mu`` (``inf`` off a hard constraint)."""
        m = self.marginal(mu)
        if self.epsilon is None:
            return 0.0 if np.allclose(m, self.target, rtol=0, atol=1e-12) else np.inf
        return self.epsilon * kl_divergence(m, self.target)

    def to_dict(self):
        return {"axis": self.axis, "target": self.target.tolist(),
                "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d):
        return cls(d["axis"], d["target"], d.get("epsilon"))
