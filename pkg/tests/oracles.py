"""Independent reference computations for the test-suite.

Nothing here calls into the routine it is used to check: loops replace
vectorized code, enumeration replaces dynamic programming, sampling
replaces recursion, and a derivative-free search replaces closed forms.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# --- permutations -----------------------------------------------------------------


def heap_permutations(items):
    """All orderings by Heap's algorithm (no itertools)."""
    a = list(items)
    n = len(a)
    out = [tuple(a)]
    c = [0] * n
    i = 0
    while i < n:
        if c[i] < i:
            j = 0 if i % 2 == 0 else c[i]
            a[j], a[i] = a[i], a[j]
            out.append(tuple(a))
            c[i] += 1
            i = 0
        else:
            c[i] = 0
            i += 1
    return out


def symmetrized_value(f, x):
    perms = heap_permutations(range(len(x)))
    vals = [np.atleast_1d(np.asarray(f(tuple(x[j] for j in p)), dtype=float)) for p in perms]
    return sum(vals) / len(perms)


# --- golden-section maximization of the mirror objective --------------------------


def _golden_max(fun, lo, hi, tol=1e-12, iters=200):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def mirror_objective(u, pi, q, eta, tau):
    """(eta / (1 - tau eta)) [q.u + tau H(u)] - KL(u | pi), pure Python."""
    lin = sum(qa * ua for qa, ua in zip(q, u))
    ent = -sum(ua * math.log(ua) for ua in u if ua > 0)
    kl = sum(ua * math.log(ua / pa) for ua, pa in zip(u, pi) if ua > 0)
    return eta / (1.0 - tau * eta) * (lin + tau * ent) - kl


def argmax_mirror_objective(pi, q, eta, tau):
    """Maximizer over the simplex for |A| in {2, 3} by (nested) golden section."""
    pi, q = list(map(float, pi)), list(map(float, q))
    if len(pi) == 2:
        x, _ = _golden_max(lambda u0: mirror_objective((u0, 1 - u0), pi, q, eta, tau), 0.0, 1.0)
        return np.array([x, 1 - x])
    if len(pi) == 3:
        def inner(u0):
            rest = 1.0 - u0
            u1, v = _golden_max(
                lambda u1: mirror_objective((u0, u1, rest - u1), pi, q, eta, tau),
                0.0, rest, tol=1e-13)
            return u1, v

        u0, _ = _golden_max(lambda u0: inner(u0)[1], 0.0, 1.0, tol=1e-12)
        u1, _ = inner(u0)
        return np.array([u0, u1, 1.0 - u0 - u1])
    raise ValueError("oracle supports |A| in {2, 3}")


# --- mean-field flow and Q by loops / sampling ---------------------------------------


def flow_by_loops(mfg, table):
    H, S, A = table.shape
    flows = [[[mfg.rho0[s] * table[0, s, a] for a in range(A)] for s in range(S)]]
    for h in range(1, H):
        mu = np.array(flows[-1])
        P = mfg.transition_matrix(mu)
        nxt = [[0.0] * A for _ in range(S)]
        for s in range(S):
            for a in range(A):
                for s2 in range(S):
                    for a2 in range(A):
                        nxt[s2][a2] += mu[s, a] * P[s, a, s2] * table[h, s2, a2]
        flows.append(nxt)
    return np.array(flows)


def q_monte_carlo(mfg, table, flow, tau, episodes, rng):
    """Rollouts of a representative agent in the MDP frozen at ``flow``.

    For each (h, s, a) start the agent collects R + tau H(pi_h(s)) at every
    step, with the next action drawn from the policy of the next step.
    Returns (mean, standard error), each (H, S, A).
    """
    H, S, A = table.shape
    Ps = [mfg.transition_matrix(flow[h]) for h in range(H)]
    Rs = [mfg.reward_matrix(flow[h]) for h in range(H)]
    ent = np.array([[-sum(p * math.log(p) for p in table[h, s] if p > 0) for s in range(S)]
                    for h in range(H)])
    mean = np.zeros((H, S, A))
    se = np.zeros((H, S, A))
    for h0 in range(H):
        for s0 in range(S):
            for a0 in range(A):
                s = np.full(episodes, s0)
                a = np.full(episodes, a0)
                total = np.zeros(episodes)
                for h in range(h0, H):
                    total += Rs[h][s, a] + tau * ent[h, s]
                    if h == H - 1:
                        break
                    cdf = np.cumsum(Ps[h][s, a], axis=1)
                    s = (rng.random(episodes)[:, None] > cdf).sum(axis=1).clip(max=S - 1)
                    cdf = np.cumsum(table[h + 1, s], axis=1)
                    a = (rng.random(episodes)[:, None] > cdf).sum(axis=1).clip(max=A - 1)
                mean[h0, s0, a0] = total.mean()
                se[h0, s0, a0] = total.std(ddof=1) / math.sqrt(episodes)
    return mean, se


def policy_value_by_enumeration(mfg, flow, actions, tau=0.0):
    """Value of a deterministic policy ``actions[h][s]`` by full path enumeration."""
    H = len(actions)
    S = mfg.n_states

    def walk(h, s):
        a = actions[h][s]
        r = float(mfg.reward_matrix(flow[h])[s, a])
        if h == H - 1:
            return r
        P = mfg.transition_matrix(flow[h])[s, a]
        return r + sum(P[s2] * walk(h + 1, s2) for s2 in range(S) if P[s2] > 0)

    return sum(mfg.rho0[s] * walk(0, s) for s in range(S))


def best_deterministic_value(mfg, flow):
    H, S, A = mfg.horizon, mfg.n_states, mfg.n_actions
    best = -math.inf
    for choice in itertools.product(range(A), repeat=H * S):
        acts = [list(choice[h * S:(h + 1) * S]) for h in range(H)]
        best = max(best, policy_value_by_enumeration(mfg, flow, acts))
    return best


# --- TD by an explicit loop ------------------------------------------------------------


def td_loop(episodes, H, S, A, tau_entropy, delta, cap):
    """Algorithm-style TD with one scalar update at a time.

    ``episodes`` is a list of (states, actions, rewards) arrays of shape (H, n).
    """
    Q = [[[0.0] * A for _ in range(S)] for _ in range(H)]
    u = 2.0 / delta
    for m, (st, ac, rw) in enumerate(episodes):
        beta = u / (m + u)
        for h in range(H):
            for j in range(st.shape[1]):
                s, a = int(st[h, j]), int(ac[h, j])
                y = float(rw[h, j]) + float(tau_entropy[h][s])
                if h < H - 1:
                    y += Q[h + 1][int(st[h + 1, j])][int(ac[h + 1, j])]
                Q[h][s][a] = Q[h][s][a] + beta * (y - Q[h][s][a])
            if cap is not None:
                for s in range(S):
                    for a in range(A):
                        Q[h][s][a] = min(max(Q[h][s][a], 0.0), cap)
    return np.array(Q)


# --- per-agent kernels by loops ----------------------------------------------------------


def kernels_by_loops(game, states, actions):
    """(P (N, S), r (N,)) for one profile via the scalar per-agent interface."""
    N, S, A = game.n_agents, game.n_states, game.n_actions
    counts = np.zeros((S, A), dtype=np.int64)
    for s, a in zip(states, actions):
        counts[s, a] += 1
    P = np.zeros((N, S))
    r = np.zeros(N)
    for i in range(N):
        others = counts.copy()
        others[states[i], actions[i]] -= 1
        P[i] = game.transition(i, int(states[i]), int(actions[i]), others)
        r[i] = game.reward(i, int(states[i]), int(actions[i]), others)
    return P, r


def simplex_projection_by_bisection(v, iters=200):
    """Euclidean projection via bisection on the KKT threshold."""
    v = np.asarray(v, dtype=float)
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0, None).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi), 0, None)
