"""Population flows, backward induction, best responses and exploitability
for finite-horizon mean-field games, plus the exact-gradient mirror descent
solver used as a reference for the sampled learners."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp, softmax

from .core import (
    MeanFieldGame,
    Policy,
    PopulationDistribution,
    PopulationFlow,
    QTable,
    entropy,
)

log = logging.getLogger(__name__)


class FunctionalMFG(MeanFieldGame):
    """MFG from two callables returning the (S, A, S) and (S, A) tables."""

    def __init__(self, n_states, n_actions, horizon, rho0, transition_fn, reward_fn,
                 reward_bounds=(0.0, 1.0)):
        self.n_states = n_states
        self.n_actions = n_actions
        self.horizon = horizon
        self.rho0 = np.asarray(rho0, dtype=float)
        self._transition_fn = transition_fn
        self._reward_fn = reward_fn
        self.reward_bounds = tuple(reward_bounds)

    def transition_matrix(self, mu):
        return self._transition_fn(mu)

    def reward_matrix(self, mu):
        return self._reward_fn(mu)


class NormalizedMFG(MeanFieldGame):
    """Affine view of an MFG with rewards mapped from its bounds to [0, 1]."""

    def __init__(self, base: MeanFieldGame):
        self.base = base
        self.n_states = base.n_states
        self.n_actions = base.n_actions
        self.horizon = base.horizon
        self.rho0 = base.rho0
        lo, hi = base.reward_bounds
        if hi <= lo:
            raise ValueError("reward bounds must satisfy lo < hi")
        self.lo, self.scale = lo, hi - lo
        self.reward_bounds = (0.0, 1.0)

    def transition_matrix(self, mu):
        return self.base.transition_matrix(mu)

    def reward_matrix(self, mu):
        return (self.base.reward_matrix(mu) - self.lo) / self.scale


def normalized(mfg: MeanFieldGame) -> NormalizedMFG:
    return mfg if isinstance(mfg, NormalizedMFG) else NormalizedMFG(mfg)


def _table(pi) -> np.ndarray:
    return pi.table if isinstance(pi, Policy) else np.asarray(pi, dtype=float)


def _flow_array(flow) -> np.ndarray:
    return flow.per_step if isinstance(flow, PopulationFlow) else np.asarray(flow, dtype=float)


# --- population flow --------------------------------------------------------


def gamma_step(mfg: MeanFieldGame, mu, pi_next) -> PopulationDistribution:
    """One application of the population update for an (S, A) policy row set."""
    mu = mu.weights if isinstance(mu, PopulationDistribution) else np.asarray(mu, dtype=float)
    return PopulationDistribution(_gamma(mfg, mu, np.asarray(pi_next, dtype=float)))


def _gamma(mfg, mu, pi_next):
    P = mfg.transition_matrix(mu)
    next_states = np.einsum("sa,sat->t", mu, P)
    return next_states[:, None] * pi_next


def induce_flow(mfg: MeanFieldGame, pi) -> PopulationFlow:
    table = _table(pi)
    if table.shape[0] != mfg.horizon:
        raise ValueError(f"policy horizon {table.shape[0]} != game horizon {mfg.horizon}")
    flow = np.empty_like(table)
    flow[0] = mfg.rho0[:, None] * table[0]
    for h in range(1, mfg.horizon):
        flow[h] = _gamma(mfg, flow[h - 1], table[h])
    return PopulationFlow(flow)


def induce_flow_mixture(mfg: MeanFieldGame, tables) -> tuple[PopulationFlow, np.ndarray]:
    """Flow of a population where agent ``i`` follows ``tables[i]``.

    Returns the population flow (average over agents) and each agent's own
    state-action marginals, shape (N, H, S, A).
    """
    tables = np.asarray(tables, dtype=float)
    N, H = tables.shape[:2]
    marg = np.empty_like(tables)
    marg[:, 0] = mfg.rho0[None, :, None] * tables[:, 0]
    pop = np.empty(tables.shape[1:])
    pop[0] = marg[:, 0].mean(axis=0)
    for h in range(1, H):
        P = mfg.transition_matrix(pop[h - 1])
        nxt = np.einsum("nsa,sat->nt", marg[:, h - 1], P)
        marg[:, h] = nxt[:, :, None] * tables[:, h]
        pop[h] = marg[:, h].mean(axis=0)
    return PopulationFlow(pop), marg


# --- values -----------------------------------------------------------------


def q_backward(mfg: MeanFieldGame, pi, tau: float = 0.0, flow=None) -> QTable:
    """Regularized Q-values of ``pi`` in the MDP frozen at ``flow``.

    The next action is drawn from the policy of the next step, which is the
    fixed point targeted by the TD learner.
    """
    table = _table(pi)
    mu = _flow_array(flow if flow is not None else induce_flow(mfg, table))
    H = mfg.horizon
    bonus = tau * entropy(table)  # (H, S)
    Q = np.empty_like(table)
    Q[H - 1] = mfg.reward_matrix(mu[H - 1]) + bonus[H - 1][:, None]
    for h in range(H - 2, -1, -1):
        v_next = np.sum(table[h + 1] * Q[h + 1], axis=1)
        P = mfg.transition_matrix(mu[h])
        Q[h] = mfg.reward_matrix(mu[h]) + bonus[h][:, None] + P @ v_next
    return QTable(Q, tau)


def mf_value(mfg: MeanFieldGame, flow, pi, tau: float = 0.0) -> float:
    table = _table(pi)
    Q = q_backward(mfg, table, tau, flow).values
    return float(mfg.rho0 @ np.sum(table[0] * Q[0], axis=1))


def best_response(mfg: MeanFieldGame, flow, tau: float = 0.0) -> tuple[Policy, float]:
    """Optimal policy against a fixed flow.

    With ``tau == 0`` this is hard backward induction with ties resolved to
    the lowest action index; otherwise the soft (log-sum-exp) recursion with
    a softmax policy.
    """
    mu = _flow_array(flow)
    H, S, A = mfg.horizon, mfg.n_states, mfg.n_actions
    pol = np.empty((H, S, A))
    v_next = np.zeros(S)
    for h in range(H - 1, -1, -1):
        q = mfg.reward_matrix(mu[h]) + mfg.transition_matrix(mu[h]) @ v_next
        if tau > 0:
            # shift before scaling so a tiny tau cannot overflow
            top = q.max(axis=1, keepdims=True)
            with np.errstate(over="ignore"):  # -inf entries get zero weight
                z = (q - top) / tau
            v_next = top[:, 0] + tau * logsumexp(z, axis=1)
            pol[h] = softmax(z, axis=1)
        else:
            best = np.argmax(q, axis=1)
            v_next = q[np.arange(S), best]
            pol[h] = np.eye(A)[best]
    return Policy(pol), float(mfg.rho0 @ v_next)


@dataclass(frozen=True)
class ExploitabilityReport:
    value: float
    best_response: Policy
    v_br: float
    v_pi: float
    tau: float

    def __post_init__(self):
        if self.value < -1e-8:
            raise AssertionError(f"negative exploitability {self.value}")


def mfg_exploitability(mfg: MeanFieldGame, pi, tau: float = 0.0,
                       flow=None) -> ExploitabilityReport:
    table = _table(pi)
    if flow is None:
        flow = induce_flow(mfg, table)
    br, v_br = best_response(mfg, flow, tau)
    v_pi = mf_value(mfg, flow, table, tau)
    return ExploitabilityReport(v_br - v_pi, br, v_br, v_pi, tau)


def kernel_constants(mfg: MeanFieldGame, mus) -> tuple[float, float, float]:
    """Sampled ``(K_s, K_a, K_mu)`` of the transition kernel over the given
    distributions: the largest L1 change in ``P`` when the state or the action
    changes at a fixed ``mu``, and the largest L1 change per unit L1 change in
    ``mu`` over all pairs of ``mus``.
    """
    Ps = [mfg.transition_matrix(np.asarray(m)) for m in mus]
    k_s = k_a = k_mu = 0.0
    for P in Ps:
        k_s = max(k_s, float(np.abs(P[:, None] - P[None, :]).sum(-1).max()))
        k_a = max(k_a, float(np.abs(P[:, :, None] - P[:, None, :]).sum(-1).max()))
    for i in range(len(Ps)):
        for j in range(i + 1, len(Ps)):
            d = float(np.abs(np.asarray(mus[i]) - np.asarray(mus[j])).sum())
            if d > 0:
                k_mu = max(k_mu, float(np.abs(Ps[i] - Ps[j]).sum(-1).max()) / d)
    return k_s, k_a, k_mu


# --- monotonicity -----------------------------------------------------------


@dataclass(frozen=True)
class MonotonicityReport:
    violated: bool
    min_inner_product: float
    max_inner_product: float
    witness: tuple[np.ndarray, np.ndarray] | None
    p_independent_of_mu: bool
    pairs_tested: int

    @property
    def boundary(self) -> bool:
        """All inner products vanish: monotone only in the non-strict sense."""
        return max(abs(self.min_inner_product), abs(self.max_inner_product)) <= 1e-12

    @property
    def monotone(self) -> bool:
        return self.p_independent_of_mu and not self.violated


def check_monotonicity(mfg: MeanFieldGame, pair_budget: int = 10_000,
                       rng: np.random.Generator | None = None,
                       p_triples: int = 1000) -> MonotonicityReport:
    rng = rng if rng is not None else np.random.default_rng(0)
    S, A = mfg.n_states, mfg.n_actions
    draw = lambda: rng.dirichlet(np.ones(S * A)).reshape(S, A)

    p_independent = True
    for _ in range(p_triples):
        mu, nu = draw(), draw()
        s, a = rng.integers(S), rng.integers(A)
        gap = np.abs(mfg.transition_matrix(mu)[s, a] - mfg.transition_matrix(nu)[s, a]).sum()
        if gap > 1e-9:
            p_independent = False
            break

    lo, hi, witness = math.inf, -math.inf, None
    for _ in range(pair_budget):
        mu, nu = draw(), draw()
        ip = float(np.sum((mfg.reward_matrix(mu) - mfg.reward_matrix(nu)) * (mu - nu)))
        lo = min(lo, ip)
        if ip > hi:
            hi, witness = ip, (mu, nu)
    return MonotonicityReport(
        violated=hi >= 0.0,
        min_inner_product=lo,
        max_inner_product=hi,
        witness=witness if hi >= 0.0 else None,
        p_independent_of_mu=p_independent,
        pairs_tested=pair_budget,
    )


# --- mirror descent ---------------------------------------------------------


def pmd_policy_update(pi_row, q_row, eta: float, tau: float) -> np.ndarray:
    """Entropy-regularized mirror step, ``pi^(1 - tau eta) exp(eta q)`` normalized.

    Works on the last axis, so whole (H, S, A) tables can be updated at once.
    """
    pi_row = np.asarray(pi_row, dtype=float)
    if tau * eta >= 1.0:
        raise ValueError(f"tau * eta = {tau * eta} must be < 1")
    if np.any(pi_row <= 0.0):
        raise ValueError("support collapsed: policy has a zero entry")
    logits = (1.0 - tau * eta) * np.log(pi_row) + eta * np.asarray(q_row, dtype=float)
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def default_lr(t: int) -> float:
    return 1.0 / math.sqrt(t + 1)


def default_mixing(t: int) -> float:
    return 1.0 / (t + 1)


def check_tau_range(tau: float) -> None:
    if not 0.0 < tau < 0.5:
        warnings.warn(f"tau={tau} is outside (0, 1/2); convergence guarantee does not apply",
                      stacklevel=3)


def mix_uniform(table: np.ndarray, weight: float) -> np.ndarray:
    return (1.0 - weight) * table + weight / table.shape[-1]


@dataclass
class PmdResult:
    iterates: list[Policy]
    average: Policy

    def average_upto(self, t: int) -> Policy:
        """Average of iterates ``0..t``, i.e. the output had the run stopped at ``T = t``."""
        return Policy(np.mean([p.table for p in self.iterates[: t + 1]], axis=0))


def exact_pmd(mfg: MeanFieldGame, T: int, tau: float,
              lr_schedule: Callable[[int], float] = default_lr,
              mixing_schedule: Callable[[int], float] = default_mixing,
              mixing_offset: int = 0) -> PmdResult:
    """Mirror descent with exact Q-values from backward induction.

    ``mixing_offset=1`` starts the uniform mixing at ``1/(t+2)`` instead of
    the default, which makes the second iterate exactly uniform.
    """
    check_tau_range(tau)
    H, S, A = mfg.horizon, mfg.n_states, mfg.n_actions
    pi = np.full((H, S, A), 1.0 / A)
    iterates = [Policy(pi)]
    for t in range(T):
        Q = q_backward(mfg, pi, tau).values
        q = Q - tau * entropy(pi)[..., None]
        pi_hat = pmd_policy_update(pi, q, lr_schedule(t), tau)
        pi = mix_uniform(pi_hat, mixing_schedule(t + mixing_offset))
        iterates.append(Policy(pi))
    avg = Policy(np.mean([p.table for p in iterates], axis=0))
    return PmdResult(iterates, avg)
