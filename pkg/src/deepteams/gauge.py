"""Deep projections, gauge residuals, policy expansion, and noise covariances.

An *agent field* is a list with one ``(n(s), dim)`` array per sub-population
holding per-agent vectors (states, actions, or noises). The deep projection
maps a field to the stacked feature averages; the gauge residual removes the
feature span from each agent's vector. Together they split the team into one
low-dimensional deep subsystem plus per-agent residual subsystems, and both
transforms are exact linear identities of the influence factors.
"""

import numpy as np

from .model import Policy, TeamModel


def _field_dims(field, m: TeamModel):
    for s, (arr, sub) in enumerate(zip(field, m.subs)):
        a = np.asarray(arr)
        if a.ndim != 2 or a.shape[0] != sub.n:
            raise ValueError(
                f"field block {s} has shape {a.shape}, expected ({sub.n}, dim)")
    if len(field) != m.S:
        raise ValueError(f"field has {len(field)} blocks, expected {m.S}")


def deep_project(field, m: TeamModel) -> np.ndarray:
    """Stacked per-feature averages ``(1/n) * sum_i alpha[i, j] * v_i``."""
    _field_dims(field, m)
    parts = []
    for arr, sub in zip(field, m.subs):
        bar = sub.alpha.T @ np.asarray(arr, dtype=float) / sub.n  # (f, dim)
        parts.append(bar.reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0)


def _deep_blocks(vec: np.ndarray, m: TeamModel, dims):
    """Split a stacked deep vector back into per-sub-population (f, dim) arrays."""
    out = []
    off = 0
    for sub, dim in zip(m.subs, dims):
        size = sub.f * dim
        out.append(vec[off:off + size].reshape(sub.f, dim))
        off += size
    return out


def gauge_residual(field, m: TeamModel):
    """Remove the feature span: ``dv_i = v_i - sum_j alpha[i, j] * vbar_j``.

    The output satisfies ``sum_i alpha[i, j] @ dv_i == 0`` for every feature,
    so projecting the residual back yields zero.
    """
    _field_dims(field, m)
    out = []
    for arr, sub in zip(field, m.subs):
        a = np.asarray(arr, dtype=float)
        bar = sub.alpha.T @ a / sub.n              # (f, dim)
        out.append(a - sub.alpha @ bar)
    return out


def expand_policy(p: Policy, x_field, xbar: np.ndarray, m: TeamModel):
    """Per-agent actions for gains applied exactly as given.

    ``u_i = theta[s] x_i - sum_j alpha[i,j] theta[s] xbar_j(s)
    + sum_j alpha[i,j] theta_bar[(s,j) rows] @ xbar``, which is equivalent to
    ``residual(u) = theta[s] residual(x)`` together with
    ``deep_project(u) = theta_bar @ xbar``.
    """
    _field_dims(x_field, m)
    xbar = np.asarray(xbar, dtype=float)
    xb_blocks = _deep_blocks(xbar, m, [sub.dx for sub in m.subs])
    out = []
    for s, (arr, sub) in enumerate(zip(x_field, m.subs)):
        X = np.asarray(arr, dtype=float)
        theta = p.theta[s]
        u = X @ theta.T
        u -= sub.alpha @ (xb_blocks[s] @ theta.T)
        rows = p.theta_bar[m.u_offset(s):m.u_offset(s) + sub.f * sub.du, :]
        g = (rows @ xbar).reshape(sub.f, sub.du)
        u += sub.alpha @ g
        out.append(u)
    return out


def noise_covariance(m: TeamModel, s: int, i: int | None = None,
                     k: int | None = None, j: int | None = None,
                     j2: int | None = None) -> np.ndarray:
    """Exact second moments of the gauge-transformed noise.

    Select with the index arguments:

    * ``i`` alone: ``E[dw_i dw_i^T] = (1 - (1/n) sum_j alpha[i,j]^2) sigma_w``
    * ``i, k``:    ``E[dw_i dw_k^T] = -(1/n) sum_j alpha[i,j] alpha[k,j] sigma_w``
    * ``j`` alone: ``E[wbar_j wbar_j^T] = (1/n) sigma_w``
    * ``j, j2`` (distinct features): zero
    * ``i`` and ``j`` together: the residual/deep cross term, zero

    These analytic values are the ground truth used for the residual
    subsystem noise; nothing is estimated.
    """
    sub = m.subs[s]
    n, dx = sub.n, sub.dx
    if i is not None and not (0 <= i < n):
        raise IndexError(f"agent index {i} out of range for n={n}")
    if k is not None and not (0 <= k < n):
        raise IndexError(f"agent index {k} out of range for n={n}")
    if j is not None and not (0 <= j < sub.f):
        raise IndexError(f"feature index {j} out of range for f={sub.f}")
    if j2 is not None and not (0 <= j2 < sub.f):
        raise IndexError(f"feature index {j2} out of range for f={sub.f}")

    if i is not None and j is not None:
        return np.zeros((dx, dx))
    if i is not None:
        if k is None or k == i:
            w = 1.0 - float(np.sum(sub.alpha[i] ** 2)) / n
            return w * sub.sigma_w
        w = -float(np.dot(sub.alpha[i], sub.alpha[k])) / n
        return w * sub.sigma_w
    if j is not None:
        if j2 is None or j2 == j:
            return sub.sigma_w / n
        return np.zeros((dx, dx))
    raise ValueError("select a covariance with agent and/or feature indices")


def team_cost(m: TeamModel, x_field, u_field) -> float:
    """Per-step team cost: weighted per-agent quadratic costs plus the deep
    cross terms evaluated at the projected state/action."""
    _field_dims(x_field, m)
    _field_dims(u_field, m)
    xbar = deep_project(x_field, m)
    ubar = deep_project(u_field, m)
    total = float(xbar @ m.qbar_cross @ xbar + ubar @ m.rbar_cross @ ubar)
    for arr_x, arr_u, sub in zip(x_field, u_field, m.subs):
        X = np.asarray(arr_x, dtype=float)
        U = np.asarray(arr_u, dtype=float)
        local = np.einsum("nd,de,ne->", X, sub.Q, X) + np.einsum("nd,de,ne->", U, sub.R, U)
        total += sub.mu / sub.n * float(local)
    return total
