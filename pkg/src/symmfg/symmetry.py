"""Symmetrization, population lifting and Lipschitz extension of agent kernels,
with empirical certificates for heterogeneity, sparsity and smoothness."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy.special import comb

from .core import DynamicGame, MeanFieldGame, RngStream, project_simplex, profile_counts

log = logging.getLogger(__name__)

MAX_BRUTE_ARITY = 8
MAX_EXACT_PROFILES = 2_000_000


# --- functions on tuples and grids --------------------------------------------


@dataclass(frozen=True)
class TupleFunction:
    """Vector-valued function of an ordered tuple of ``arity`` (state, action) pairs."""

    arity: int
    n_states: int
    n_actions: int
    fn: Callable
    out_dim: int = 1

    def __call__(self, pairs) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.fn(tuple(map(tuple, pairs))), dtype=float))
        if out.shape != (self.out_dim,):
            raise ValueError(f"expected output of size {self.out_dim}, got {out.shape}")
        return out

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(s, a) for s in range(self.n_states) for a in range(self.n_actions)]


def symmetrize_bruteforce(f: TupleFunction) -> TupleFunction:
    """Average of ``f`` over all orderings of its input tuple."""
    if f.arity > MAX_BRUTE_ARITY:
        raise ValueError(f"arity too large for brute force ({f.arity} > {MAX_BRUTE_ARITY})")
    perms = list(itertools.permutations(range(f.arity)))

    def g(pairs):
        # the average is the same for every ordering of the input, so summing
        # over the sorted tuple makes the result exactly order independent
        canon = sorted(tuple(p) for p in pairs)
        vals = np.array([f([canon[j] for j in p]) for p in perms])
        if np.all(vals == vals[0]):
            return vals[0].copy()  # symmetric input passes through bit for bit
        return np.array([math.fsum(col) for col in vals.T]) / len(perms)

    return TupleFunction(f.arity, f.n_states, f.n_actions, g, f.out_dim)


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_size(total: int, parts: int) -> int:
    return int(comb(total + parts - 1, parts - 1, exact=True))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on the grid of empirical distributions of ``denominator`` agents.

    ``counts`` is (G, S*A) with rows summing to ``denominator``; ``values``
    is (G, D).
    """

    denominator: int
    n_states: int
    n_actions: int
    counts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if c.shape[0] != v.shape[0] or c.shape[1] != self.n_states * self.n_actions:
            raise ValueError("counts and values do not line up")
        if np.any(c.sum(axis=1) != self.denominator):
            raise ValueError("grid rows must sum to the denominator")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "values", v)

    @property
    def points(self) -> np.ndarray:
        """Grid points as distributions, (G, S*A)."""
        return self.counts / self.denominator

    @property
    def out_dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, counts) -> np.ndarray:
        key = np.asarray(counts).ravel()
        hit = np.flatnonzero(np.all(self.counts == key, axis=1))
        if hit.size == 0:
            raise KeyError(f"{tuple(key)} is not a grid point")
        return self.values[hit[0]]

    def at(self, mu) -> np.ndarray:
        return self(np.rint(np.asarray(mu).ravel() * self.denominator).astype(int))

    @classmethod
    def tabulate(cls, fn, denominator, n_states, n_actions, out_dim=None) -> "GridFunction":
        """Evaluate ``fn`` on the count table (S, A) of every grid point."""
        rows = np.array(list(compositions(denominator, n_states * n_actions)), dtype=np.int64)
        vals = [np.atleast_1d(np.asarray(fn(r.reshape(n_states, n_actions)), dtype=float))
                for r in rows]
        return cls(denominator, n_states, n_actions, rows, np.array(vals))


def _canonical_tuple(count_row, n_actions):
    pairs = []
    for cell, k in enumerate(count_row):
        pairs.extend([(cell // n_actions, cell % n_actions)] * int(k))
    return pairs


def lift_population(g: TupleFunction, checks: int = 100,
                    rng: np.random.Generator | None = None) -> GridFunction:
    """Tabulate a symmetric tuple function on the grid of its empirical distributions.

    Symmetry is checked on ``checks`` random (tuple, permutation) draws first.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    cells = g.cells
    for _ in range(checks):
        x = [cells[j] for j in rng.integers(len(cells), size=g.arity)]
        y = [x[j] for j in rng.permutation(g.arity)]
        if not np.allclose(g(x), g(y), rtol=0, atol=1e-12):
            raise ValueError("function not symmetric")
    rows = np.array(list(compositions(g.arity, len(cells))), dtype=np.int64)
    vals = np.array([g(_canonical_tuple(r, g.n_actions)) for r in rows])
    return GridFunction(g.arity, g.n_states, g.n_actions, rows, vals)


# --- Lipschitz modulus and extension -------------------------------------------


def _pair_moduli(pts, vals, norm):
    ord_ = 1 if norm == "L1" else 2
    i, j = np.triu_indices(pts.shape[0], k=1)
    dx = np.linalg.norm(pts[i] - pts[j], ord=ord_, axis=1)
    dy = np.linalg.norm(vals[i] - vals[j], ord=ord_, axis=1)
    return i, j, dy / dx


def estimate_lipschitz_modulus(g: GridFunction, norm: str = "L2", pair_budget: int | None = None,
                               rng: np.random.Generator | None = None) -> float:
    """Largest difference quotient over grid pairs, with ``norm`` on inputs and outputs.

    Enumerates every pair unless ``pair_budget`` is given, in which case that
    many random pairs are drawn (a lower bound).
    """
    if norm not in ("L1", "L2"):
        raise ValueError("norm must be 'L1' or 'L2'")
    G = g.counts.shape[0]
    if G < 2:
        warnings.warn("singleton grid: modulus is 0", stacklevel=2)
        return 0.0
    pts = g.points
    if pair_budget is None:
        best = 0.0
        block = 2048
        ord_ = 1 if norm == "L1" else 2
        for start in range(0, G, block):
            a = pts[start:start + block]
            va = g.values[start:start + block]
            dx = np.linalg.norm(a[:, None, :] - pts[None, :, :], ord=ord_, axis=2)
            dy = np.linalg.norm(va[:, None, :] - g.values[None, :, :], ord=ord_, axis=2)
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(dx > 0, dy / dx, 0.0)
            best = max(best, float(q.max()))
        return best
    rng = rng if rng is not None else np.random.default_rng(0)
    i = rng.integers(G, size=pair_budget)
    j = rng.integers(G, size=pair_budget)
    keep = i != j
    ord_ = 1 if norm == "L1" else 2
    dx = np.linalg.norm(pts[i[keep]] - pts[j[keep]], ord=ord_, axis=1)
    dy = np.linalg.norm(g.values[i[keep]] - g.values[j[keep]], ord=ord_, axis=1)
    return float((dy / dx).max()) if dx.size else 0.0


def _coordinate_modulus(g: GridFunction):
    """Per-coordinate L2 modulus and its witness (i, j, coordinate)."""
    if g.counts.shape[0] < 2:
        return 0.0, None
    pts = g.points
    i, j = np.triu_indices(pts.shape[0], k=1)
    dx = np.linalg.norm(pts[i] - pts[j], axis=1)
    q = np.abs(g.values[i] - g.values[j]) / dx[:, None]
    k = np.unravel_index(np.argmax(q), q.shape)
    return float(q[k]), (int(i[k[0]]), int(j[k[0]]), int(k[1]))


class ModulusViolation(ValueError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True, eq=False)
class McShaneExtension:
    """``ext_j(mu) = min_nu [g_j(nu) + L ||mu - nu||_2]`` per output coordinate.

    With ``project=True`` the vector of extended coordinates is projected
    onto the probability simplex, for distribution-valued kernels.
    """

    grid: GridFunction
    L: float
    project: bool = False

    def __call__(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float).ravel()
        d = np.linalg.norm(self.grid.points - mu, axis=1)
        cand = self.grid.values + self.L * d[:, None]
        # argmin returns the lowest grid index on ties
        out = cand[np.argmin(cand, axis=0), np.arange(cand.shape[1])]
        return project_simplex(out) if self.project else out


def mcshane_extend(g: GridFunction, L: float, project: bool = False,
                   slack: float = 1e-12) -> McShaneExtension:
    modulus, witness = _coordinate_modulus(g)
    if L + slack < modulus:
        i, j, k = witness
        raise ModulusViolation(
            f"modulus violation: L={L} below grid modulus {modulus} "
            f"(points {tuple(g.counts[i])} and {tuple(g.counts[j])}, coordinate {k})",
            (g.counts[i], g.counts[j], k),
        )
    return McShaneExtension(g, float(L), project)


# --- sparsity -------------------------------------------------------------------


@dataclass(frozen=True)
class SparsityCertificate:
    holds: bool
    trials: int
    seed: int
    cells: frozenset
    witness: tuple | None = None

    def __bool__(self):
        return self.holds


def check_kappa_sparsity(f, U, n_states: int, n_actions: int, arity: int,
                         trials: int = 1000, seed: int = 0,
                         count_table: bool | None = None) -> SparsityCertificate:
    """Randomized test that ``f`` only sees inputs through the cells in ``U``.

    ``f`` is a ``TupleFunction`` or a function of an (S, A) count table of
    ``arity`` agents. Each trial draws ``x`` and a ``y`` that agrees with
    ``x`` on every entry in ``U`` while every other entry is redrawn outside
    ``U``; the certificate fails on the first pair with ``f(x) != f(y)``.
    """
    U = frozenset(tuple(c) for c in U)
    cells = [(s, a) for s in range(n_states) for a in range(n_actions)]
    outside = [c for c in cells if c not in U]
    if count_table is None:
        count_table = not isinstance(f, TupleFunction)
    rng = RngStream(seed).generator()

    def evaluate(pairs):
        if count_table:
            s = np.array([p[0] for p in pairs], dtype=np.int64)
            a = np.array([p[1] for p in pairs], dtype=np.int64)
            counts = profile_counts(s, a, n_states, n_actions) if pairs else \
                np.zeros((n_states, n_actions), dtype=np.int64)
            return np.atleast_1d(np.asarray(f(counts), dtype=float))
        return f(pairs)

    for t in range(trials):
        x = [cells[j] for j in rng.integers(len(cells), size=arity)]
        if outside:
            y = [c if c in U else outside[rng.integers(len(outside))] for c in x]
        else:
            y = list(x)
        y = [y[j] for j in rng.permutation(arity)] if count_table else y
        fx, fy = evaluate(x), evaluate(y)
        if not np.array_equal(fx, fy):
            return SparsityCertificate(False, t + 1, seed, U, (x, y, fx, fy))
    return SparsityCertificate(True, trials, seed, U)


# --- heterogeneity --------------------------------------------------------------


@dataclass(frozen=True)
class AlphaBetaReport:
    alpha: float
    beta: float
    mode: str
    samples_used: int
    alpha_witness: tuple | None
    beta_witness: tuple | None

    @property
    def lower_bound(self) -> bool:
        return self.mode == "sampled"


def _others_profiles_exact(game):
    SA = game.n_states * game.n_actions
    n = grid_size(game.n_agents - 1, SA)
    if n * game.n_agents > MAX_EXACT_PROFILES:
        raise ValueError(f"exact enumeration needs {n * game.n_agents} profiles "
                         f"(cap {MAX_EXACT_PROFILES}); use sampled mode")
    for row in compositions(game.n_agents - 1, SA):
        yield np.array(row, dtype=np.int64).reshape(game.n_states, game.n_actions)


def _random_composition(rng, total, parts):
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate([[-1], bars, [total + parts - 1]])
    return np.diff(edges) - 1


def _sampled_profiles(game, budget, rng, policy_tables=None):
    """Vertices of the grid, then uniform grid draws and on-policy profiles."""
    S, A, K = game.n_states, game.n_actions, game.n_agents - 1
    SA = S * A
    out = []
    for c in range(SA):
        row = np.zeros(SA, dtype=np.int64)
        row[c] = K
        out.append(row.reshape(S, A))
    n_onpolicy = 0 if policy_tables is None else (budget - len(out)) // 2
    while len(out) < budget - n_onpolicy:
        out.append(_random_composition(rng, K, SA).reshape(S, A))
    if n_onpolicy:
        from .sim import simulate

        streams = [RngStream(int(rng.integers(2**63))) for _ in range(-(-n_onpolicy // game.horizon))]
        s, a, _ = simulate(game, policy_tables, streams)
        for e in range(s.shape[0]):
            for h in range(game.horizon):
                if len(out) >= budget:
                    break
                drop = int(rng.integers(game.n_agents))
                keep = np.arange(game.n_agents) != drop
                out.append(profile_counts(s[e, h, keep], a[e, h, keep], S, A))
    return out[:budget]


def estimate_alpha_beta(game: DynamicGame, mfg: MeanFieldGame, mode: str = "exact",
                        budget: int = 2000, seed: int = 0,
                        policy=None) -> AlphaBetaReport:
    """Largest deviation of agent kernels from the mean-field kernels.

    The mean-field side is evaluated at the empirical distribution of the
    opponents' profile. Exact mode enumerates every (agent, profile); sampled
    mode draws ``budget`` (agent, profile) pairs and is a lower bound.
    """
    S, A = game.n_states, game.n_actions
    rng = RngStream(seed).generator()
    if mode == "exact":
        jobs = ((i, c) for c in _others_profiles_exact(game) for i in range(game.n_agents))
    elif mode == "sampled":
        tables = None
        if policy is not None:
            tables = policy.table if hasattr(policy, "table") else np.asarray(policy)
        profiles = _sampled_profiles(game, budget, rng, tables)
        agents = rng.integers(game.n_agents, size=len(profiles))
        agents[:min(game.n_agents, len(profiles))] = np.arange(min(game.n_agents, len(profiles)))
        jobs = zip(agents.tolist(), profiles)
    else:
        raise ValueError("mode must be 'exact' or 'sampled'")

    alpha = beta = 0.0
    a_wit = b_wit = None
    used = 0
    for i, counts in jobs:
        used += 1
        total = counts.sum()
        mu = counts / total if total else np.full((S, A), 1.0 / (S * A))
        P = mfg.transition_matrix(mu)
        R = mfg.reward_matrix(mu)
        for s in range(S):
            for a in range(A):
                da = float(np.abs(game.transition(i, s, a, counts) - P[s, a]).sum())
                db = abs(game.reward(i, s, a, counts) - float(R[s, a]))
                if da > alpha:
                    alpha, a_wit = da, (i, s, a, counts.copy())
                if db > beta:
                    beta, b_wit = db, (i, s, a, counts.copy())
    return AlphaBetaReport(alpha, beta, mode, used, a_wit, b_wit)


# --- induced mean-field game ----------------------------------------------------


class InducedMFG(MeanFieldGame):
    """Average over agents of the extended, lifted per-agent kernels.

    Each agent's ``P^i(s, a, .)`` and ``R^i(s, a, .)`` is tabulated on the
    grid of opponent profiles (count-table kernels are already symmetric, so
    lifting is tabulation) and extended with a McShane extension whose
    constant is the grid modulus of that table.
    """

    def __init__(self, game: DynamicGame):
        S, A, N = game.n_states, game.n_actions, game.n_agents
        K = N - 1
        if K < 1:
            raise ValueError("need at least two agents to lift opponent profiles")
        if grid_size(K, S * A) * N * S * A > MAX_EXACT_PROFILES:
            raise ValueError("game too large for grid extension")
        self.n_states, self.n_actions = S, A
        self.horizon = game.horizon
        self.rho0 = game.rho0
        self.reward_bounds = game.reward_bounds
        self._p_ext = []
        self._r_ext = []
        for i in range(N):
            for s in range(S):
                for a in range(A):
                    gp = GridFunction.tabulate(lambda c: game.transition(i, s, a, c), K, S, A)
                    gr = GridFunction.tabulate(lambda c: game.reward(i, s, a, c), K, S, A)
                    self._p_ext.append(mcshane_extend(gp, _coordinate_modulus(gp)[0], project=True))
                    self._r_ext.append(mcshane_extend(gr, _coordinate_modulus(gr)[0]))
        self.n_agents = N

    def transition_matrix(self, mu):
        S, A = self.n_states, self.n_actions
        vals = np.array([ext(mu) for ext in self._p_ext]).reshape(self.n_agents, S, A, S)
        return vals.mean(axis=0)

    def reward_matrix(self, mu):
        S, A = self.n_states, self.n_actions
        vals = np.array([ext(mu)[0] for ext in self._r_ext]).reshape(self.n_agents, S, A)
        return vals.mean(axis=0)


def induce_mfg(game: DynamicGame, prefer_analytic: bool = True) -> MeanFieldGame:
    """Mean-field game induced by ``game``.

    Uses the game's declared analytic continuum kernels when available and
    ``prefer_analytic`` is set; otherwise builds the grid extension, which is
    only feasible for tiny games.
    """
    if prefer_analytic:
        analytic = game.mean_field()
        if analytic is not None:
            return analytic
    try:
        return InducedMFG(game)
    except ValueError as exc:
        raise ValueError(f"no extension available: {exc}") from None


# --- grid function files --------------------------------------------------------

GRID_HEADER = "# symmfg-gridfunction v1"


def save_grid_function(g: GridFunction, path) -> None:
    lines = [GRID_HEADER,
             f"denominator {g.denominator}",
             f"shape {g.n_states} {g.n_actions}",
             f"out_dim {g.out_dim}"]
    for c, v in zip(g.counts, g.values):
        lines.append(" ".join(map(str, c)) + "\t" + " ".join(repr(float(x)) for x in v))
    Path(path).write_text("\n".join(lines) + "\n")


def load_grid_function(path) -> GridFunction:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != GRID_HEADER:
        raise ValueError("not a version 1 grid function file")
    meta = {}
    for line in lines[1:4]:
        key, *rest = line.split()
        meta[key] = [int(x) for x in rest]
    counts, values = [], []
    for line in lines[4:]:
        if not line.strip():
            continue
        c, v = line.split("\t")
        counts.append([int(x) for x in c.split()])
        values.append([float(x) for x in v.split()])
    S, A = meta["shape"]
    return GridFunction(meta["denominator"][0], S, A, np.array(counts), np.array(values))
