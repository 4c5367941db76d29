"""N-player episode sampling, return estimates and exploitability estimates.

Each episode owns one random stream and consumes a fixed block of uniforms,
shape (2H + 1, N): initial states, then per step the action draws and the
transition draws. Trajectories therefore depend only on the stream, never
on batching or worker count, and two runs that share a stream but differ in
one agent's policy use common random numbers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DynamicGame, MeanFieldGame, Policy, RngStream, sample_index
from .mfg import best_response, induce_flow, induce_flow_mixture

log = logging.getLogger(__name__)

CHUNK = 256


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (H, N)
    actions: np.ndarray  # (H, N)
    rewards: np.ndarray  # (H, N)
    root_seed: int
    stream_id: int
    subkeys: tuple[int, ...] = ()

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


@dataclass(frozen=True)
class ReturnEstimate:
    mean: float
    std_error: float
    episodes: int


def policy_tables(policies, n_agents: int) -> np.ndarray:
    """(H, S, A) for a shared policy or (N, H, S, A) for per-agent ones."""
    if isinstance(policies, Policy):
        return policies.table
    if isinstance(policies, np.ndarray):
        return policies
    tables = np.stack([p.table if isinstance(p, Policy) else np.asarray(p) for p in policies])
    if tables.shape[0] != n_agents:
        raise ValueError(f"need {n_agents} policies, got {tables.shape[0]}")
    return tables


def episode_uniforms(streams: Sequence[RngStream], horizon: int, n_agents: int) -> np.ndarray:
    return np.stack([s.generator().random((2 * horizon + 1, n_agents)) for s in streams])


def rollout(game: DynamicGame, tables: np.ndarray, uniforms: np.ndarray):
    """Run a batch of episodes from pre-drawn uniforms, shape (E, 2H+1, N).

    Returns states, actions, rewards with shape (E, H, N).
    """
    E, _, N = uniforms.shape
    H = game.horizon
    shared = tables.ndim == 3
    if tables.shape[-3] != H:
        raise ValueError("policy horizon does not match the game")
    agents = np.arange(N)
    states = np.empty((E, H, N), dtype=np.int64)
    actions = np.empty((E, H, N), dtype=np.int64)
    rewards = np.empty((E, H, N))
    s = sample_index(game.rho0, uniforms[:, 0])
    for h in range(H):
        probs = tables[h][s] if shared else tables[agents, h, s]
        a = sample_index(probs, uniforms[:, 1 + 2 * h])
        P, r = game.profile_kernels(s, a)
        states[:, h], actions[:, h], rewards[:, h] = s, a, r
        s = sample_index(P, uniforms[:, 2 + 2 * h])
    return states, actions, rewards


def simulate(game: DynamicGame, policies, streams: Sequence[RngStream], workers: int = 1):
    """Episodes for the given streams, in stream order, as (E, H, N) arrays."""
    tables = policy_tables(policies, game.n_agents)
    chunks = [streams[i:i + CHUNK] for i in range(0, len(streams), CHUNK)]

    def run(chunk):
        return rollout(game, tables, episode_uniforms(chunk, game.horizon, game.n_agents))

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    if not parts:
        H, N = game.horizon, game.n_agents
        return (np.empty((0, H, N), np.int64), np.empty((0, H, N), np.int64),
                np.empty((0, H, N)))
    return tuple(np.concatenate(x) for x in zip(*parts))


def sample_episode(game: DynamicGame, policies, stream: RngStream) -> Trajectory:
    s, a, r = simulate(game, policies, [stream])
    return Trajectory(s[0], a[0], r[0], stream.root_seed, stream.stream_id, stream.subkeys)


def _estimate(values: np.ndarray) -> ReturnEstimate:
    n = values.shape[0]
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ReturnEstimate(float(values.mean()), se, n)


def estimate_return(game: DynamicGame, policies, agent_index: int, episodes: int,
                    stream: RngStream, workers: int = 1) -> ReturnEstimate:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    streams = [stream.child(e) for e in range(episodes)]
    _, _, r = simulate(game, policies, streams, workers)
    return _estimate(r[:, :, agent_index].sum(axis=1))


def estimate_nplayer_exploitability(game: DynamicGame, mfg: MeanFieldGame, pi,
                                    episodes: int, stream: RngStream, tau: float = 0.0,
                                    agent_index: int = 0, workers: int = 1,
                                    deviation: Policy | None = None) -> ReturnEstimate:
    """Paired Monte-Carlo gain of one deviating agent.

    The deviation is the best response in ``mfg`` against the mean-field flow
    of the population's policies, so the estimate is a lower bound on the
    agent's true exploitability. ``pi`` is a shared policy or a list of
    per-agent policies. Both arms of episode ``e`` replay stream ``e``.
    Values are on the game's raw reward scale.
    """
    tables = policy_tables(pi, game.n_agents)
    if deviation is None:
        if tables.ndim == 3:
            flow = induce_flow(mfg, tables)
        else:
            flow, _ = induce_flow_mixture(mfg, tables)
        deviation, _ = best_response(mfg, flow, tau)
    if tables.ndim == 3:
        tables = np.broadcast_to(tables, (game.n_agents,) + tables.shape)
    deviating = tables.copy()
    deviating[agent_index] = deviation.table
    streams = [stream.child(e) for e in range(episodes)]
    _, _, r_base = simulate(game, tables, streams, workers)
    _, _, r_dev = simulate(game, deviating, streams, workers)
    gain = r_dev[:, :, agent_index].sum(axis=1) - r_base[:, :, agent_index].sum(axis=1)
    return _estimate(gain)


TRAJECTORY_HEADER = "episode\tstep\tagent\tstate\taction\treward"


def dump_trajectories(path, states, actions, rewards) -> None:
    """Write one tab-separated record per (episode, step, agent)."""
    E, H, N = states.shape
    with Path(path).open("w") as fh:
        fh.write(f"# symmfg-trajectories v1\n{TRAJECTORY_HEADER}\n")
        for e in range(E):
            for h in range(H):
                for i in range(N):
                    fh.write(f"{e}\t{h}\t{i}\t{states[e, h, i]}\t{actions[e, h, i]}\t"
                             f"{float(rewards[e, h, i])!r}\n")
