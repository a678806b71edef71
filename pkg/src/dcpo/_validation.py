"""Input validation helpers shared by the solvers and the estimator."""

import numpy as np

PROB_ATOL = 1e-12


class DegenerateInputError(ValueError):
    """An input has a zero mass where a positive one is required."""


def check_array(x, ndim=None, name="array", allow_neginf=False):
    """Convert ``x`` to a float64 array and reject NaN (and inf, optionally)."""
    x = np.asarray(x, dtype=float)
    if ndim is not None and x.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError(f"{name} contains NaN")
    if allow_neginf:
        if np.isposinf(x).any():
            raise ValueError(f"{name} contains +inf")
    elif not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_probability_vector(p, size=None, name="distribution", atol=PROB_ATOL):
    p = check_array(p, ndim=1, name=name)
    if size is not None and p.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {p.shape[0]}")
    if (p < 0).any():
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1, sums to {p.sum()!r}")
    return p


def check_policy(pi, n_states=None, n_actions=None, atol=PROB_ATOL):
    """Validate a row-stochastic ``(n_states, n_actions)`` policy matrix."""
    pi = check_array(pi, ndim=2, name="policy")
    if n_states is not None and pi.shape != (n_states, n_actions):
        raise ValueError(
            f"policy must have shape {(n_states, n_actions)}, got {pi.shape}")
    if (pi < 0).any():
        raise ValueError("policy has negative entries")
    if np.abs(pi.sum(axis=1) - 1.0).max() > atol:
        raise ValueError("policy rows must sum to 1")
    return pi


def check_nonnegative_matrix(mu, shape=None, name="mu"):
    mu = check_array(mu, ndim=2, name=name)
    if shape is not None and mu.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {mu.shape}")
    if (mu < 0).any():
        raise ValueError(f"{name} has negative entries")
    return mu


def check_log_matrix(log_mu, shape=None, name="log_mu"):
    """Log-domain matrices may hold ``-inf`` for exact zeros, never NaN or +inf."""
    log_mu = check_array(log_mu, ndim=2, name=name, allow_neginf=True)
    if shape is not None and log_mu.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {log_mu.shape}")
    return log_mu


def check_positive(value, name):
    value = float(value)
    if not (value > 0 and np.isfinite(value)):
        raise ValueError(f"{name} must be finite and > 0, got {value!r}")
    return value


def safe_log(x):
    """Elementwise log with log(0) = -inf and no warning."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    np.log(x, out=out, where=x > 0)
    return out
