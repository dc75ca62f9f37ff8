"""Monte-Carlo simulation of the full n-agent team under arbitrary policies.

Noise streams: every agent owns an independent substream keyed by
``(seed prefix..., sub-population index, agent index)``, so changing the
number of agents in one sub-population never reshuffles the noise of the
others, and rollouts run identically regardless of batching or scheduling.
Each agent's stream first yields its initial state, then its ``(T, dx)``
noise block.

Initial states: Gaussian with covariance ``sigma_x`` (``init_mode="gaussian"``),
componentwise uniform on ``[0, 0.1]`` (``init_mode="uniform"``, the bundled
example2 convention), or an explicit agent field.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MGFOverflow, NumericOverflow
from .gauge import deep_project, team_cost
from .model import Policy, TeamModel

OVERFLOW_LIMIT = 1e12
_EXP_ARG_LIMIT = 700.0  # beyond this exp() leaves double range


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _agent_rng(prefix, s: int, i: int) -> np.random.Generator:
    entropy = tuple(int(x) for x in prefix) + (s, i)
    if any(x < 0 for x in entropy):
        raise ValueError("seed components must be nonnegative integers")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _draw_sample(m: TeamModel, prefix, T: int, init_mode, chols):
    """Initial field and (T, n, dx) noise blocks for one rollout."""
    inits, noises = [], []
    explicit = not isinstance(init_mode, str)
    for s, sub in enumerate(m.subs):
        Lx, Lw = chols[s]
        x0 = np.empty((sub.n, sub.dx))
        W = np.empty((T, sub.n, sub.dx))
        for i in range(sub.n):
            rng = _agent_rng(prefix, s, i)
            if explicit:
                x0[i] = np.asarray(init_mode[s], dtype=float)[i]
            elif init_mode == "gaussian":
                x0[i] = rng.standard_normal(sub.dx) @ Lx.T
            elif init_mode == "uniform":
                x0[i] = rng.uniform(0.0, 0.1, size=sub.dx)
            else:
                raise ValueError(f"unknown init_mode {init_mode!r}")
            W[:, i, :] = rng.standard_normal((T, sub.dx)) @ Lw.T
        inits.append(x0)
        noises.append(W)
    return inits, noises


def _rollout_engine(m: TeamModel, thetas, theta_bars, T: int, prefixes,
                    init_mode="gaussian", keep_trajectory=False,
                    collect_covariance=False):
    """Simulate ``C = len(prefixes)`` rollouts, one policy per rollout.

    ``thetas[s]`` has shape (C, du, dx) and ``theta_bars`` (C, Du, Dx). Costs
    are returned per step; samples whose state norm passes the overflow guard
    are frozen at zero and flagged in ``overflow_step`` (first offending
    step, 1-based; -1 when clean).
    """
    C = len(prefixes)
    S = m.S
    Dx = m.Dx
    chols = [(_psd_sqrt(sub.sigma_x), _psd_sqrt(sub.sigma_w)) for sub in m.subs]

    X, W = [], []
    for c, prefix in enumerate(prefixes):
        inits, noises = _draw_sample(m, prefix, T, init_mode, chols)
        if c == 0:
            X = [np.empty((C,) + ini.shape) for ini in inits]
            W = [np.empty((C,) + w.shape) for w in noises]
        for s in range(S):
            X[s][c] = inits[s]
            W[s][c] = noises[s]

    costs = np.zeros((C, T))
    overflow_step = np.full(C, -1, dtype=int)
    alive = np.ones(C, dtype=bool)
    sig_local = [np.zeros((C, sub.dx, sub.dx)) for sub in m.subs] if collect_covariance else None
    sig_deep = np.zeros((C, Dx, Dx)) if collect_covariance else None

    traj = None
    if keep_trajectory:
        traj = {
            "states": [np.empty((T + 1, sub.n, sub.dx)) for sub in m.subs],
            "actions": [np.empty((T, sub.n, sub.du)) for sub in m.subs],
        }

    x_offsets = [m.x_offset(s) for s in range(S)]
    u_offsets = [m.u_offset(s) for s in range(S)]
    Astacks = [np.stack(sub.Abar) for sub in m.subs]   # (f, dx, Dx)
    Bstacks = [np.stack(sub.Bbar) for sub in m.subs]   # (f, dx, Du)

    for t in range(T):
        # deep state
        xbar = np.zeros((C, Dx))
        xb_blocks = []
        for s, sub in enumerate(m.subs):
            blk = np.einsum("nf,cnd->cfd", sub.alpha, X[s]) / sub.n
            xb_blocks.append(blk)
            xbar[:, x_offsets[s]:x_offsets[s] + sub.f * sub.dx] = blk.reshape(C, -1)

        # actions and deep action
        U = []
        ubar = np.zeros((C, m.Du))
        for s, sub in enumerate(m.subs):
            th = thetas[s]
            u = np.einsum("cnd,cud->cnu", X[s], th)
            u -= np.einsum("nf,cfu->cnu", sub.alpha,
                           np.einsum("cfd,cud->cfu", xb_blocks[s], th))
            rows = theta_bars[:, u_offsets[s]:u_offsets[s] + sub.f * sub.du, :]
            g = np.einsum("ckD,cD->ck", rows, xbar).reshape(C, sub.f, sub.du)
            u += np.einsum("nf,cfu->cnu", sub.alpha, g)
            U.append(u)
            ubar[:, u_offsets[s]:u_offsets[s] + sub.f * sub.du] = (
                np.einsum("nf,cnu->cfu", sub.alpha, u) / sub.n).reshape(C, -1)

        # team cost at (x_t, u_t)
        c_t = np.einsum("cD,DE,cE->c", xbar, m.qbar_cross, xbar)
        c_t += np.einsum("cD,DE,cE->c", ubar, m.rbar_cross, ubar)
        for s, sub in enumerate(m.subs):
            local = np.einsum("cnd,de,cne->c", X[s], sub.Q, X[s])
            local += np.einsum("cnd,de,cne->c", U[s], sub.R, U[s])
            c_t += sub.mu / sub.n * local
        costs[:, t] = np.where(alive, c_t, 0.0)

        if collect_covariance:
            for s, sub in enumerate(m.subs):
                resid = X[s] - np.einsum("nf,cfd->cnd", sub.alpha, xb_blocks[s])
                sig_local[s] += np.einsum("cnd,cne->cde", resid, resid)
            sig_deep += np.einsum("cD,cE->cDE", xbar, xbar)

        if keep_trajectory:
            for s in range(S):
                traj["states"][s][t] = X[s][0]
                traj["actions"][s][t] = U[s][0]

        # state update
        for s, sub in enumerate(m.subs):
            coupling = np.einsum("fdD,cD->cfd", Astacks[s], xbar)
            coupling += np.einsum("fdU,cU->cfd", Bstacks[s], ubar)
            X[s] = (X[s] @ sub.A.T + U[s] @ sub.B.T
                    + np.einsum("nf,cfd->cnd", sub.alpha, coupling)
                    + W[s][:, t])

        # overflow guard on the fresh states; rejected samples stay pinned
        # at zero so the unstable loop cannot regrow them from the noise
        mags = np.zeros(C)
        for s in range(S):
            mags = np.maximum(mags, np.abs(X[s]).reshape(C, -1).max(axis=1))
        blown = alive & (mags > OVERFLOW_LIMIT)
        if np.any(blown):
            overflow_step[blown] = t + 1
            alive &= ~blown
        if not alive.all():
            for s in range(S):
                X[s][~alive] = 0.0

    if keep_trajectory:
        for s in range(S):
            traj["states"][s][T] = X[s][0]
        traj["noises"] = [W[s][0] for s in range(S)]

    out = {"costs": costs, "overflow_step": overflow_step}
    if collect_covariance:
        out["sig_local"] = sig_local
        out["sig_deep"] = sig_deep
    if keep_trajectory:
        out.update(traj)
    return out


def _policy_stacks(policies, m: TeamModel):
    thetas = [np.stack([p.theta[s] for p in policies]) for s in range(m.S)]
    theta_bars = np.stack([p.theta_bar for p in policies])
    return thetas, theta_bars


@dataclass(frozen=True)
class Trajectory:
    """One simulated run: states at t = 1..T+1, actions/noises/costs at t = 1..T."""

    states: tuple     # per sub-population (T+1, n, dx)
    actions: tuple    # per sub-population (T, n, du)
    noises: tuple     # per sub-population (T, n, dx)
    costs: np.ndarray
    seed: int
    init_mode: str

    @property
    def horizon(self) -> int:
        return len(self.costs)

    def to_csv(self, path):
        """Rows (t, sub, agent, state components, action components, cbar);
        component columns are padded to the widest sub-population."""
        dx_max = max(s.shape[2] for s in self.states)
        du_max = max(a.shape[2] for a in self.actions)
        header = (["t", "sub", "agent"]
                  + [f"x{i + 1}" for i in range(dx_max)]
                  + [f"u{i + 1}" for i in range(du_max)] + ["cbar"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(self.horizon):
                for s, (xs, us) in enumerate(zip(self.states, self.actions)):
                    n, dx = xs.shape[1], xs.shape[2]
                    du = us.shape[2]
                    for i in range(n):
                        row = [t + 1, s, i]
                        row += [repr(float(v)) for v in xs[t, i]] + [""] * (dx_max - dx)
                        row += [repr(float(v)) for v in us[t, i]] + [""] * (du_max - du)
                        row.append(repr(float(self.costs[t])))
                        w.writerow(row)


@dataclass(frozen=True)
class ObjectiveEstimate:
    """Monte-Carlo objective value with its standard error."""

    value: float
    stderr: float
    mode: str
    horizon: int
    n_seeds: int
    mean_variance_approx: float | None = None


def rollout(m: TeamModel, p: Policy, T: int, seed: int,
            init_mode="gaussian") -> Trajectory:
    """Simulate the full team for T steps; deterministic in (seed, m, p, T).

    Raises :class:`NumericOverflow` with the offending step if any state norm
    exceeds the overflow guard (unstable policy).
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    thetas, theta_bars = _policy_stacks([p], m)
    out = _rollout_engine(m, thetas, theta_bars, T, [(seed,)],
                          init_mode=init_mode, keep_trajectory=True)
    step = int(out["overflow_step"][0])
    if step >= 0:
        raise NumericOverflow(
            f"state norm exceeded {OVERFLOW_LIMIT:g} at step {step}", step=step)
    return Trajectory(
        states=tuple(out["states"]), actions=tuple(out["actions"]),
        noises=tuple(out["noises"]), costs=out["costs"][0], seed=seed,
        init_mode=init_mode if isinstance(init_mode, str) else "explicit")


def _seed_list(seeds):
    if isinstance(seeds, (int, np.integer)):
        return list(range(int(seeds)))
    return [int(s) for s in seeds]


def _batch_costs(m, p, T, seed_list, init_mode):
    thetas, theta_bars = _policy_stacks([p] * len(seed_list), m)
    out = _rollout_engine(m, thetas, theta_bars, T,
                          [(s,) for s in seed_list], init_mode=init_mode)
    bad = out["overflow_step"]
    if np.any(bad >= 0):
        step = int(bad[bad >= 0][0])
        raise NumericOverflow(
            f"state norm exceeded {OVERFLOW_LIMIT:g} at step {step}", step=step)
    return out["costs"]


def estimate_risk_neutral(m: TeamModel, p: Policy, T: int, seeds,
                          init_mode="gaussian") -> ObjectiveEstimate:
    """Average of the per-seed time-averaged team cost; no burn-in discarded."""
    seed_list = _seed_list(seeds)
    costs = _batch_costs(m, p, T, seed_list, init_mode)
    per_seed = costs.mean(axis=1)
    k = len(seed_list)
    stderr = float(per_seed.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    return ObjectiveEstimate(value=float(per_seed.mean()), stderr=stderr,
                             mode="risk-neutral time-average", horizon=T,
                             n_seeds=k)


def estimate_risk_sensitive(m: TeamModel, p: Policy, T: int, seeds,
                            lam: float, init_mode="gaussian") -> ObjectiveEstimate:
    """Empirical log-MGF objective ``(1/(lam T)) log mean exp(lam * sum_t cost)``.

    Evaluated with max-subtraction; raises :class:`MGFOverflow` when the raw
    exponent leaves double range, which signals that ``lam * T`` is too large
    for Monte-Carlo estimation. Also reports the small-risk mean + variance
    approximation ``mean + (lam/2) var`` of the time-averaged cost for
    cross-checking.
    """
    if lam <= 0:
        raise ValueError("risk factor must be positive; use estimate_risk_neutral")
    seed_list = _seed_list(seeds)
    costs = _batch_costs(m, p, T, seed_list, init_mode)
    z = lam * costs.sum(axis=1)
    if float(np.max(np.abs(z))) > _EXP_ARG_LIMIT:
        raise MGFOverflow(
            f"exp argument reached {float(np.max(np.abs(z))):.3g}; "
            "lam * T too large for Monte-Carlo estimation")
    zmax = float(z.max())
    expz = np.exp(z - zmax)
    mean_exp = float(expz.mean())
    value = (zmax + float(np.log(mean_exp))) / (lam * T)
    k = len(seed_list)
    if k > 1:
        se_mean = float(expz.std(ddof=1) / np.sqrt(k))
        stderr = se_mean / mean_exp / (lam * T)
    else:
        stderr = 0.0
    per_seed = costs.mean(axis=1)
    approx = float(per_seed.mean() + lam / 2.0 * per_seed.var(ddof=1)) if k > 1 \
        else float(per_seed.mean())
    return ObjectiveEstimate(value=value, stderr=stderr,
                             mode="risk-sensitive log-MGF", horizon=T,
                             n_seeds=k, mean_variance_approx=approx)


def deep_trajectory(traj: Trajectory, m: TeamModel):
    """Projected deep states (T+1, Dx) and deep actions (T, Du) of a run."""
    T = traj.horizon
    xbar = np.stack([deep_project([s[t] for s in traj.states], m) for t in range(T + 1)])
    ubar = np.stack([deep_project([a[t] for a in traj.actions], m) for t in range(T)])
    return xbar, ubar


def recompute_costs(traj: Trajectory, m: TeamModel) -> np.ndarray:
    """Per-step team cost recomputed from the stored states/actions."""
    return np.array([
        team_cost(m, [s[t] for s in traj.states], [a[t] for a in traj.actions])
        for t in range(traj.horizon)
    ])
