"""Model-free risk-neutral learning via sphere-smoothing gradient estimates.

Each gain block is perturbed independently by a uniform draw from the
Frobenius sphere of radius ``r`` in its own dimension; one finite rollout per
perturbed policy yields the time-averaged cost ``Jhat``, and the gradient
estimate for a block with ``d`` entries is

    ghat = (1/L) * sum_l (d / r^2) * Jhat_l * pert_l,

which converges to the gradient of the ball-smoothed cost as L grows and to
the true gradient as r shrinks. Since the cost separates additively across
blocks, one joint draw serves every block.

Perturbed policies that overflow the rollout guard are rejected and
resampled (clipping would bias the estimator); more than roughly 20%
rejections aborts with :class:`TooManyUnstableSamples`.

Execution follows the team-learner mode: one shared perturbation stream, a
single update applied identically to all agents each iteration. The
alternative modes (a single learner with passive imitators, or many
independent learners whose explorations decouple through the deep state) are
intentionally not implemented.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import pg_exact, riccati
from .errors import TooManyUnstableSamples
from .model import Policy, TeamModel, policy_axpy, policy_distance
from .sim import _policy_stacks, _rollout_engine
from .trace import RunTrace, TraceRow

_PERT_SALT = 0x5EED
DEFAULT_CHUNK = 256


def sample_sphere(shape, r: float, rng) -> np.ndarray:
    """Uniform draw from the radius-``r`` Frobenius sphere: Gaussian fill,
    then normalization. A 1x1 block reduces to a fair draw from {-r, +r}."""
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    while True:
        g = rng.standard_normal(shape)
        norm = float(np.linalg.norm(g))
        if norm > 0.0:
            if g.size == 1:
                return np.where(g >= 0.0, r, -r)
            return g * (r / norm)


def _draw_perturbation(m: TeamModel, r: float, rng) -> Policy:
    return Policy(
        theta=tuple(sample_sphere((sub.du, sub.dx), r, rng) for sub in m.subs),
        theta_bar=sample_sphere((m.Du, m.Dx), r, rng),
    )


def _negate(p: Policy) -> Policy:
    return Policy(theta=tuple(-t for t in p.theta), theta_bar=-p.theta_bar)


@dataclass(frozen=True)
class PerturbationSample:
    """One accepted draw: the perturbation, its rollout cost, its seed tuple."""

    perturbation: Policy
    cost: float
    seed: tuple


@dataclass(frozen=True)
class EmpiricalGradient:
    """Sphere-smoothing gradient estimate over L rollouts of horizon T."""

    grad: tuple
    grad_deep: np.ndarray
    L: int
    T: int
    r: float
    rejected: int
    cost_mean: float
    cost_stderr: float
    sigma: tuple | None = None
    sigma_deep: np.ndarray | None = None

    def blocks(self) -> list:
        return list(self.grad) + [self.grad_deep]

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.blocks())))


def empirical_gradient(m: TeamModel, p: Policy, L: int, T: int, r: float,
                       seed: int, mode: str = "pg", iteration: int = 0,
                       antithetic: bool = False, init_mode="gaussian",
                       chunk_size: int = DEFAULT_CHUNK) -> EmpiricalGradient:
    """Estimate the risk-neutral gradient at ``p`` from L perturbed rollouts.

    ``mode="npg"`` additionally accumulates the empirical state correlations
    from the same rollouts: ``(mu/n) sum_i sum_t dx dx'`` per sub-population
    and ``sum_t xbar xbar'`` for the deep block, both normalized by L * T.

    With ``antithetic=True`` the perturbations come in +/- pairs (L must be
    even); each member still uses its own noise stream. Sample seeds derive
    from ``(seed, iteration, attempt index)`` so results do not depend on
    chunking or scheduling.
    """
    if mode not in ("pg", "npg"):
        raise ValueError(f"unknown mode {mode!r}")
    if L < 1:
        raise ValueError("sample count L must be >= 1")
    if antithetic and L % 2:
        raise ValueError("antithetic pairing requires an even sample count")

    collect_cov = mode == "npg"
    d_local = [sub.du * sub.dx for sub in m.subs]
    d_deep = m.Du * m.Dx

    def new_candidates(start_attempt, count):
        """(perturbation, prefix) descriptors beginning at a given attempt index."""
        out = []
        a = start_attempt
        if antithetic:
            for _ in range(count // 2):
                rng = np.random.default_rng(
                    np.random.SeedSequence((seed, iteration, a, _PERT_SALT)))
                pert = _draw_perturbation(m, r, rng)
                out.append((pert, (seed, iteration, a)))
                out.append((_negate(pert), (seed, iteration, a + 1)))
                a += 2
        else:
            for _ in range(count):
                rng = np.random.default_rng(
                    np.random.SeedSequence((seed, iteration, a, _PERT_SALT)))
                out.append((_draw_perturbation(m, r, rng), (seed, iteration, a)))
                a += 1
        return out, a

    samples = []
    cov_local = [np.zeros((sub.dx, sub.dx)) for sub in m.subs] if collect_cov else None
    cov_deep = np.zeros((m.Dx, m.Dx)) if collect_cov else None
    rejected = 0
    reject_budget = int(0.25 * L) + 2
    attempt = 0
    group = 2 if antithetic else 1

    while len(samples) < L:
        want = L - len(samples)
        batch = min(chunk_size, want)
        batch = group * math.ceil(batch / group)
        cands, attempt = new_candidates(attempt, batch)
        policies = [policy_axpy(p, pert.blocks(), 1.0) for pert, _ in cands]
        thetas, theta_bars = _policy_stacks(policies, m)
        out = _rollout_engine(m, thetas, theta_bars, T,
                              [pref for _, pref in cands], init_mode=init_mode,
                              collect_covariance=collect_cov)
        blown = out["overflow_step"] >= 0
        for g0 in range(0, len(cands), group):
            members = range(g0, g0 + group)
            if any(blown[c] for c in members):
                rejected += int(sum(bool(blown[c]) for c in members))
                if rejected > reject_budget:
                    raise TooManyUnstableSamples(
                        f"{rejected} of {attempt} perturbed rollouts overflowed "
                        f"(>20% tolerated for L={L})")
                continue
            for c in members:
                pert, pref = cands[c]
                samples.append(PerturbationSample(
                    perturbation=pert,
                    cost=float(out["costs"][c].mean()),
                    seed=pref))
                if collect_cov:
                    for s in range(m.S):
                        cov_local[s] += out["sig_local"][s][c]
                    cov_deep += out["sig_deep"][c]
            if len(samples) >= L:
                break
    samples = samples[:L]

    grads = [np.zeros((sub.du, sub.dx)) for sub in m.subs]
    grad_deep = np.zeros((m.Du, m.Dx))
    for smp in samples:
        for s in range(m.S):
            grads[s] += (d_local[s] / r ** 2) * smp.cost * smp.perturbation.theta[s]
        grad_deep += (d_deep / r ** 2) * smp.cost * smp.perturbation.theta_bar
    grads = [g / L for g in grads]
    grad_deep /= L

    costs = np.array([smp.cost for smp in samples])
    stderr = float(costs.std(ddof=1) / np.sqrt(L)) if L > 1 else 0.0

    sigma = sigma_deep = None
    if collect_cov:
        sigma = tuple(sub.mu / sub.n * cov_local[s] / (L * T)
                      for s, sub in enumerate(m.subs))
        sigma_deep = cov_deep / (L * T)

    return EmpiricalGradient(grad=tuple(grads), grad_deep=grad_deep, L=L, T=T,
                             r=r, rejected=rejected,
                             cost_mean=float(costs.mean()), cost_stderr=stderr,
                             sigma=sigma, sigma_deep=sigma_deep)


def learn(m: TeamModel, p0: Policy, algo: str = "pg", eta: float = 0.1,
          L: int = 100, T: int = 10, r: float = 0.05, iters: int = 100,
          seed: int = 0, antithetic: bool = False, init_mode="gaussian",
          sigma_reg: float = 1e-8, chunk_size: int = DEFAULT_CHUNK) -> RunTrace:
    """Model-free gradient descent on the risk-neutral cost.

    Every iteration estimates the gradient from L perturbed rollouts of
    horizon T and applies one shared update. Trace rows carry the cost
    estimate, gain error against the model-known optimum, estimated gradient
    norm, rejection count, and cost standard error; a final measurement row
    records the learned policy. If an iterate becomes so unstable that
    estimation fails, the run halts and reports the last estimable policy.
    """
    if algo not in ("pg", "npg"):
        raise ValueError(f"unknown algorithm {algo!r}")
    if iters == 0:
        return RunTrace(algo=f"zo-{algo}", rows=[], final_policy=p0,
                        status="completed")
    sol = riccati.solve(m, 0.0)
    p_star = riccati.optimal_policy(sol)
    j_star = pg_exact.evaluate(m, p_star, lam=0.0).cost

    mode = "npg" if algo == "npg" else "pg"
    p = p0
    prev = p0
    rows = []
    status = "completed"
    for k in range(iters + 1):
        try:
            eg = empirical_gradient(m, p, L=L, T=T, r=r, seed=seed, mode=mode,
                                    iteration=k, antithetic=antithetic,
                                    init_mode=init_mode, chunk_size=chunk_size)
        except TooManyUnstableSamples:
            if not rows:
                raise
            status = "unstable"
            p = prev
            break
        rows.append(TraceRow(iteration=k, cost=eg.cost_mean,
                             gap=eg.cost_mean - j_star, grad_norm=eg.norm,
                             gain_error=policy_distance(p, p_star),
                             rejected_samples=eg.rejected,
                             estimate_stderr=eg.cost_stderr))
        if k == iters:
            break
        prev = p
        if algo == "pg":
            p = policy_axpy(p, eg.blocks(), -eta)
        else:
            direction = []
            for g, sig in zip(eg.grad, eg.sigma):
                reg = sig + sigma_reg * np.eye(sig.shape[0])
                direction.append(np.linalg.solve(reg.T, g.T).T)
            regd = eg.sigma_deep + sigma_reg * np.eye(m.Dx)
            direction.append(np.linalg.solve(regd.T, eg.grad_deep.T).T)
            p = policy_axpy(p, direction, -eta)

    return RunTrace(algo=f"zo-{algo}", rows=rows, final_policy=p, status=status)
