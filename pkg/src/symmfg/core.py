"""Spaces, distributions, policies, game interfaces and random streams."""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DIST_TOL = 1e-9


@dataclass(frozen=True)
class StateSpace:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"space size must be >= 1, got {self.size}")
        if self.labels is not None and len(self.labels) != self.size:
            raise ValueError("labels must match size")

    def label(self, index: int) -> str:
        return self.labels[index] if self.labels else str(index)


ActionSpace = StateSpace


def _check_distribution(w: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{what}: non-finite weights")
    if np.any(w < -DIST_TOL):
        raise ValueError(f"{what}: negative weight {w.min()}")
    total = w.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > DIST_TOL):
        raise ValueError(f"{what}: weights sum to {total} instead of 1")
    w = np.clip(w, 0.0, None)
    # rows already within a few ulp of 1 are kept, so construction is idempotent
    total = w.sum(axis=-1, keepdims=True)
    return np.where(np.abs(total - 1.0) <= 8 * np.finfo(float).eps, w, w / total)


@dataclass(frozen=True, eq=False)
class PopulationDistribution:
    """A probability table over (state, action) cells, shape (S, A).

    ``denominator`` is set when every weight times it is an integer, i.e.
    the distribution is an empirical distribution of that many agents.
    """

    weights: np.ndarray
    denominator: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2:
            raise ValueError("population weights must be an (S, A) table")
        w = _check_distribution(w.ravel(), "population").reshape(w.shape)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.denominator is not None:
            scaled = w * self.denominator
            if np.any(np.abs(scaled - np.round(scaled)) > 1e-6):
                raise ValueError("weights are not on the grid of the given denominator")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @property
    def flat(self) -> np.ndarray:
        return self.weights.ravel()

    @property
    def on_grid(self) -> bool:
        return self.denominator is not None

    def __getitem__(self, cell):
        return self.weights[cell]

    @classmethod
    def from_counts(cls, counts) -> "PopulationDistribution":
        counts = np.asarray(counts)
        total = int(counts.sum())
        if total < 1:
            raise ValueError("empty profile")
        return cls(counts / total, denominator=total)


@dataclass(frozen=True, eq=False)
class PopulationFlow:
    """Population distributions for steps ``0..H-1`` as an (H, S, A) array."""

    per_step: np.ndarray

    def __post_init__(self):
        f = np.array(self.per_step, dtype=float)
        if f.ndim != 3:
            raise ValueError("flow must be an (H, S, A) array")
        H, S, A = f.shape
        f = _check_distribution(f.reshape(H, S * A), "flow").reshape(H, S, A)
        f.setflags(write=False)
        object.__setattr__(self, "per_step", f)

    @property
    def horizon(self) -> int:
        return self.per_step.shape[0]

    def __len__(self):
        return self.horizon

    def __getitem__(self, h: int) -> PopulationDistribution:
        return PopulationDistribution(self.per_step[h])


@dataclass(frozen=True, eq=False)
class Policy:
    """Time-dependent policy; ``table[h, s]`` is the action distribution."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 3:
            raise ValueError("policy table must be (H, S, A)")
        t = _check_distribution(t, "policy")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def horizon(self) -> int:
        return self.table.shape[0]

    @property
    def n_states(self) -> int:
        return self.table.shape[1]

    @property
    def n_actions(self) -> int:
        return self.table.shape[2]

    def __call__(self, h: int, s: int) -> np.ndarray:
        return self.table[h, s]

    @classmethod
    def uniform(cls, horizon: int, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((horizon, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        """Build from an (H, S) integer array of chosen actions."""
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    def allclose(self, other: "Policy", atol: float = 0.0) -> bool:
        return self.table.shape == other.table.shape and np.allclose(
            self.table, other.table, rtol=0.0, atol=atol
        )


@dataclass(frozen=True, eq=False)
class QTable:
    values: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("Q values must be (H, S, A)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]


def q_max(horizon: int, n_actions: int) -> float:
    """Upper bound on regularized Q-values with rewards in [0, 1]."""
    return horizon * (1.0 + math.log(n_actions))


# --- elementary functionals -------------------------------------------------


def empirical_distribution(pairs: Sequence[tuple[int, int]], n_states: int,
                           n_actions: int) -> PopulationDistribution:
    if len(pairs) == 0:
        raise ValueError("empty profile")
    counts = np.zeros((n_states, n_actions), dtype=np.int64)
    for s, a in pairs:
        if not (0 <= s < n_states and 0 <= a < n_actions):
            raise IndexError(f"pair {(s, a)} out of range")
        counts[s, a] += 1
    return PopulationDistribution.from_counts(counts)


def profile_counts(states, actions, n_states: int, n_actions: int) -> np.ndarray:
    """Count table of a profile; leading batch axes are kept."""
    states = np.asarray(states)
    actions = np.asarray(actions)
    cells = states * n_actions + actions
    SA = n_states * n_actions
    if cells.ndim == 1:
        return np.bincount(cells, minlength=SA).reshape(n_states, n_actions)
    flat = cells.reshape(-1, cells.shape[-1])
    offs = (np.arange(flat.shape[0]) * SA)[:, None]
    out = np.bincount((flat + offs).ravel(), minlength=flat.shape[0] * SA)
    return out.reshape(*cells.shape[:-1], n_states, n_actions)


def entropy(u) -> float | np.ndarray:
    """Shannon entropy along the last axis, with 0 log 0 = 0."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    out = -terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


policy_entropy = entropy


def kl_divergence(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    support = u > 0
    if np.any(v[support] <= 0):
        raise ValueError("KL undefined: v has zero mass where u is positive")
    return float(np.sum(u[support] * (np.log(u[support]) - np.log(v[support]))))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("projection input must be finite")
    n = v.size
    u = np.sort(v.ravel())[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def sample_index(probs, u) -> np.ndarray:
    """Inverse-CDF sampling along the last axis of ``probs``.

    Returns the smallest index whose cumulative mass exceeds ``u``;
    zero-probability entries are never selected.
    """
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


# --- randomness -------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (root_seed, stream_id, subkeys).

    Every stream is an independent Philox generator derived through
    ``SeedSequence`` spawn keys, so the same key always replays the same
    sequence regardless of which worker consumes it.
    """

    root_seed: int
    stream_id: int = 0
    subkeys: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not (0 <= self.root_seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("root_seed and stream_id must be 64-bit unsigned")

    def child(self, k: int) -> "RngStream":
        return RngStream(self.root_seed, self.stream_id, self.subkeys + (int(k),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.root_seed,
                                    spawn_key=(self.stream_id,) + self.subkeys)
        return np.random.Generator(np.random.Philox(ss))


# --- game interfaces --------------------------------------------------------


class MeanFieldGame(abc.ABC):
    """Mean-field game with kernels ``P(s, a, mu)`` and ``R(s, a, mu)``.

    Subclasses implement the table forms, which return the kernels for every
    (s, a) at once for a population table ``mu`` of shape (S, A).
    """

    n_states: int
    n_actions: int
    horizon: int
    rho0: np.ndarray
    reward_bounds: tuple[float, float] = (0.0, 1.0)

    @abc.abstractmethod
    def transition_matrix(self, mu: np.ndarray) -> np.ndarray:
        """(S, A, S') next-state probabilities."""

    @abc.abstractmethod
    def reward_matrix(self, mu: np.ndarray) -> np.ndarray:
        """(S, A) rewards."""

    def transition(self, s: int, a: int, mu) -> np.ndarray:
        return self.transition_matrix(_weights(mu))[s, a]

    def reward(self, s: int, a: int, mu) -> float:
        return float(self.reward_matrix(_weights(mu))[s, a])


class DynamicGame(abc.ABC):
    """N-player finite-horizon game driven by the others' count table.

    ``others`` is an integer (S, A) table of the other N-1 agents'
    state-action pairs, which makes every kernel permutation invariant in
    the opponents by construction.
    """

    n_agents: int
    n_states: int
    n_actions: int
    horizon: int
    rho0: np.ndarray
    reward_bounds: tuple[float, float] = (0.0, 1.0)

    @abc.abstractmethod
    def transition(self, i: int, s: int, a: int, others: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def reward(self, i: int, s: int, a: int, others: np.ndarray) -> float:
        ...

    def profile_kernels(self, states: np.ndarray, actions: np.ndarray):
        """Kernels for whole profiles.

        ``states``/``actions`` have shape (E, N). Returns next-state
        probabilities (E, N, S) and rewards (E, N). The default loops over
        the scalar interface; environments override it with array code.
        """
        E, N = states.shape
        probs = np.empty((E, N, self.n_states))
        rewards = np.empty((E, N))
        counts = profile_counts(states, actions, self.n_states, self.n_actions)
        for e in range(E):
            for i in range(N):
                s, a = states[e, i], actions[e, i]
                others = counts[e].copy()
                others[s, a] -= 1
                probs[e, i] = self.transition(i, s, a, others)
                rewards[e, i] = self.reward(i, s, a, others)
        return probs, rewards

    def mean_field(self) -> MeanFieldGame | None:
        """Analytic mean-field companion, if the game declares one."""
        return None


def _weights(mu) -> np.ndarray:
    return mu.weights if isinstance(mu, PopulationDistribution) else np.asarray(mu, dtype=float)


def uniform_rho0(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)
