"""Learning from N-player trajectories: TD evaluation, symmetric policy mirror
descent and the independent (per-agent) baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import DynamicGame, MeanFieldGame, Policy, QTable, RngStream, entropy, q_max
from .mfg import (
    check_tau_range,
    default_lr,
    default_mixing,
    mfg_exploitability,
    mix_uniform,
    normalized,
    pmd_policy_update,
    q_backward,
)
from .sim import CHUNK, estimate_nplayer_exploitability, simulate

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "epoch",
    "samples_consumed",
    "mfg_exploitability",
    "mfg_exploitability_raw",
    "mfg_exploitability_tau",
    "nplayer_exploitability_mean",
    "nplayer_exploitability_stderr",
    "wall_time_s",
)


@dataclass(frozen=True)
class TdConfig:
    """TD settings. ``delta=None`` estimates the visitation floor from a pilot run."""

    epochs: int = 1000
    tau: float = 0.0
    delta: float | None = None
    use_all_agents: bool = True
    clip_qmax: bool = True
    normalize_rewards: bool = True
    pilot_episodes: int = 200

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.delta is not None and not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")


@dataclass(frozen=True)
class PmdConfig:
    epochs: int = 100
    td: TdConfig = field(default_factory=TdConfig)
    tau: float = 0.1
    lr_schedule: Callable[[int], float] = default_lr
    mixing_schedule: Callable[[int], float] = default_mixing
    mixing_offset: int = 0
    normalize_rewards: bool = True
    eval_every: int | None = None
    nplayer_every: int | None = None
    nplayer_episodes: int = 2000
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def cadence(self) -> int:
        return self.eval_every or max(1, self.epochs // 50)

    @property
    def td_config(self) -> TdConfig:
        return replace(self.td, tau=self.tau, normalize_rewards=self.normalize_rewards)


def td_learning_rate(m: int, delta: float) -> float:
    u = 2.0 / delta
    return u / (m + u)


def _scale(game, normalize: bool) -> tuple[float, float]:
    if not normalize:
        return 0.0, 1.0
    lo, hi = game.reward_bounds
    return lo, hi - lo


def estimate_delta(game: DynamicGame, policies, episodes: int, stream: RngStream,
                   workers: int = 1) -> float:
    """Smallest positive state-action visitation frequency over all steps.

    Pooled over agents and floored at ``1 / (10 |S| |A|)``.
    """
    S, A = game.n_states, game.n_actions
    floor = 1.0 / (10 * S * A)
    if episodes <= 0:
        return floor
    s, a, _ = simulate(game, policies, [stream.child(e) for e in range(episodes)], workers)
    H = game.horizon
    freq = np.empty((H, S * A))
    for h in range(H):
        cells = (s[:, h] * A + a[:, h]).ravel()
        freq[h] = np.bincount(cells, minlength=S * A) / cells.size
    pos = freq[freq > 0]
    return max(float(pos.min()), floor)


def _sequential_update(Qh: np.ndarray, cells: np.ndarray, targets: np.ndarray,
                       beta: float) -> None:
    """Apply ``Q[c] <- (1 - beta) Q[c] + beta y`` for each (c, y) in order.

    Updates hitting the same cell compose; the closed form below equals the
    sequential loop in the given order.
    """
    flat = Qh.reshape(-1)
    order = np.argsort(cells, kind="stable")
    cs, ys = cells[order], targets[order]
    uniq, start, counts = np.unique(cs, return_index=True, return_counts=True)
    k = np.repeat(counts, counts)
    rank = np.arange(cs.size) - np.repeat(start, counts)
    keep = 1.0 - beta
    w = beta * keep ** (k - 1 - rank)
    contrib = np.bincount(cs, weights=w * ys, minlength=flat.size)
    flat[uniq] = keep ** counts * flat[uniq] + contrib[uniq]


def _td_episode(Q, states, actions, rewards, bonus, beta, cap):
    """One TD pass over an episode; ``states`` etc. are (H, n) for tracked agents."""
    H, S, A = Q.shape
    for h in range(H):
        s, a = states[h], actions[h]
        y = rewards[h] + bonus[h, s]
        if h < H - 1:
            y = y + Q[h + 1, states[h + 1], actions[h + 1]]
        _sequential_update(Q[h], s * A + a, y, beta)
        if cap is not None:
            np.clip(Q[h], 0.0, cap, out=Q[h])


def td_learn(game: DynamicGame, pi, cfg: TdConfig, stream: RngStream,
             workers: int = 1) -> QTable:
    """Temporal-difference evaluation of a shared policy from N-player episodes.

    Episode ``m`` uses the rate ``2/delta / (m + 2/delta)``. With
    ``use_all_agents`` every agent's transition is used, in agent order;
    otherwise only agent 0 is tracked. Rewards are mapped to [0, 1] when
    ``normalize_rewards`` is set.
    """
    table = pi.table if isinstance(pi, Policy) else np.asarray(pi)
    H, S, A = table.shape
    Q = np.zeros((H, S, A))
    if cfg.epochs == 0:
        return QTable(Q, cfg.tau)
    delta = cfg.delta or estimate_delta(game, table, cfg.pilot_episodes, stream.child(0), workers)
    lo, scale = _scale(game, cfg.normalize_rewards)
    bonus = cfg.tau * entropy(table)
    cap = q_max(H, A) if cfg.clip_qmax else None
    tracked = slice(None) if cfg.use_all_agents else slice(0, 1)
    episodes = stream.child(1)
    for start in range(0, cfg.epochs, CHUNK):
        block = range(start, min(start + CHUNK, cfg.epochs))
        s, a, r = simulate(game, table, [episodes.child(m) for m in block], workers)
        r = (r - lo) / scale
        for j, m in enumerate(block):
            _td_episode(Q, s[j][:, tracked], a[j][:, tracked], r[j][:, tracked],
                        bonus, td_learning_rate(m, delta), cap)
    return QTable(Q, cfg.tau)


def td_learn_independent(game: DynamicGame, tables: np.ndarray, cfg: TdConfig,
                         stream: RngStream, workers: int = 1) -> np.ndarray:
    """Per-agent TD: agent ``i`` updates its own table from its own trajectory only.

    Returns Q-values with shape (N, H, S, A).
    """
    N, H, S, A = tables.shape
    Q = np.zeros((N, H, S, A))
    if cfg.epochs == 0:
        return Q
    delta = cfg.delta or estimate_delta(game, tables, cfg.pilot_episodes, stream.child(0), workers)
    lo, scale = _scale(game, cfg.normalize_rewards)
    bonus = cfg.tau * entropy(tables)  # (N, H, S)
    cap = q_max(H, A) if cfg.clip_qmax else None
    agents = np.arange(N)
    episodes = stream.child(1)
    for start in range(0, cfg.epochs, CHUNK):
        block = range(start, min(start + CHUNK, cfg.epochs))
        s, a, r = simulate(game, tables, [episodes.child(m) for m in block], workers)
        r = (r - lo) / scale
        for j, m in enumerate(block):
            beta = td_learning_rate(m, delta)
            sj, aj = s[j], a[j]
            for h in range(H):
                y = r[j, h] + bonus[agents, h, sj[h]]
                if h < H - 1:
                    y = y + Q[agents, h + 1, sj[h + 1], aj[h + 1]]
                cur = Q[agents, h, sj[h], aj[h]]
                new = (1.0 - beta) * cur + beta * y
                if cap is not None:
                    new = np.clip(new, 0.0, cap)
                Q[agents, h, sj[h], aj[h]] = new
    return Q


def flow_weighted_mse(Q_hat, Q_true, flow) -> float:
    """``sum_h sum_{s,a} mu_h(s, a) (Q_hat - Q_true)^2``."""
    Qh = Q_hat.values if isinstance(Q_hat, QTable) else np.asarray(Q_hat)
    Qt = Q_true.values if isinstance(Q_true, QTable) else np.asarray(Q_true)
    mu = flow.per_step if hasattr(flow, "per_step") else np.asarray(flow)
    return float(np.sum(mu * (Qh - Qt) ** 2))


# --- mirror descent ---------------------------------------------------------


@dataclass
class LearnResult:
    policy: Policy | list[Policy]  # averaged output
    trace: list[dict]
    final_iterate: np.ndarray
    samples: int


def _pmd_step(tables, Q, t, cfg):
    eta = cfg.lr_schedule(t)
    if cfg.tau * eta >= 1:
        raise ValueError(f"tau * eta_t = {cfg.tau * eta} >= 1 at epoch {t}")
    q = Q - cfg.tau * entropy(tables)[..., None]
    pi_hat = pmd_policy_update(tables, q, eta, cfg.tau)
    return mix_uniform(pi_hat, cfg.mixing_schedule(t + cfg.mixing_offset))


class _Tracer:
    def __init__(self, game, mfg, cfg, stream):
        self.game, self.cfg = game, cfg
        self.mfg = mfg
        self.norm_mfg = normalized(mfg) if (mfg is not None and cfg.normalize_rewards) else mfg
        self.scale = _scale(game, cfg.normalize_rewards)[1]
        self.stream = stream
        self.rows: list[dict] = []
        self.t0 = time.perf_counter()
        nplayer_every = cfg.nplayer_every if cfg.nplayer_every is not None else cfg.cadence
        self.nplayer_every = nplayer_every

    def due(self, t):
        return t % self.cfg.cadence == 0 or t == self.cfg.epochs

    def record(self, t, samples, shared_avg: np.ndarray | None, agent_avgs=None):
        row = dict.fromkeys(TRACE_COLUMNS, math.nan)
        row["epoch"], row["samples_consumed"] = t, samples
        if self.mfg is not None and shared_avg is not None:
            e = mfg_exploitability(self.norm_mfg, shared_avg).value
            row["mfg_exploitability"] = e
            row["mfg_exploitability_raw"] = e * self.scale
            row["mfg_exploitability_tau"] = mfg_exploitability(self.norm_mfg, shared_avg,
                                                               self.cfg.tau).value
        want_nplayer = self.nplayer_every and (t % self.nplayer_every == 0 or t == self.cfg.epochs)
        if self.mfg is not None and want_nplayer and self.cfg.nplayer_episodes > 0:
            pol = shared_avg if agent_avgs is None else agent_avgs
            est = estimate_nplayer_exploitability(self.game, self.mfg, pol,
                                                  self.cfg.nplayer_episodes, self.stream,
                                                  workers=self.cfg.workers)
            row["nplayer_exploitability_mean"] = est.mean / self.scale
            row["nplayer_exploitability_stderr"] = est.std_error / self.scale
        row["wall_time_s"] = time.perf_counter() - self.t0
        self.rows.append(row)
        log.info("epoch %d: mfg %.5g nplayer %.5g", t, row["mfg_exploitability"],
                 row["nplayer_exploitability_mean"])
        return row


def symm_pmd(game: DynamicGame, cfg: PmdConfig, stream: RngStream,
             mfg: MeanFieldGame | None = None, on_row=None) -> LearnResult:
    """Shared-policy mirror descent with TD estimates from N-player play.

    ``mfg`` (defaults to the game's companion) is used for metrics only.
    ``on_row`` is called with each metric row as soon as it is computed.
    """
    check_tau_range(cfg.tau)
    mfg = mfg if mfg is not None else game.mean_field()
    H, S, A = game.horizon, game.n_states, game.n_actions
    td_cfg = cfg.td_config
    per_epoch = td_cfg.epochs + (td_cfg.pilot_episodes if td_cfg.delta is None else 0)
    pi = np.full((H, S, A), 1.0 / A)
    total = pi.copy()
    tracer = _Tracer(game, mfg, cfg, stream.child(2))
    samples = 0
    if tracer.due(0):
        _emit(tracer.record(0, 0, pi), on_row)
    for t in range(cfg.epochs):
        Q = td_learn(game, pi, td_cfg, stream.child(1).child(t), cfg.workers).values
        samples += per_epoch
        pi = _pmd_step(pi, Q, t, cfg)
        total += pi
        if tracer.due(t + 1):
            _emit(tracer.record(t + 1, samples, total / (t + 2)), on_row)
    return LearnResult(Policy(total / (cfg.epochs + 1)), tracer.rows, pi, samples)


def ipmd(game: DynamicGame, cfg: PmdConfig, stream: RngStream,
         mfg: MeanFieldGame | None = None, on_row=None) -> LearnResult:
    """Independent mirror descent: one policy and one Q-table per agent.

    Same schedules, episode budget and stream layout as ``symm_pmd``.
    """
    check_tau_range(cfg.tau)
    mfg = mfg if mfg is not None else game.mean_field()
    N, H, S, A = game.n_agents, game.horizon, game.n_states, game.n_actions
    td_cfg = cfg.td_config
    per_epoch = td_cfg.epochs + (td_cfg.pilot_episodes if td_cfg.delta is None else 0)
    pi = np.full((N, H, S, A), 1.0 / A)
    total = pi.copy()
    tracer = _Tracer(game, mfg, cfg, stream.child(2))
    samples = 0
    if tracer.due(0):
        _emit(tracer.record(0, 0, None, list(pi)), on_row)
    for t in range(cfg.epochs):
        Q = td_learn_independent(game, pi, td_cfg, stream.child(1).child(t), cfg.workers)
        samples += per_epoch
        pi = _pmd_step(pi, Q, t, cfg)
        total += pi
        if tracer.due(t + 1):
            _emit(tracer.record(t + 1, samples, None, list(total / (t + 2))), on_row)
    avg = total / (cfg.epochs + 1)
    return LearnResult([Policy(p) for p in avg], tracer.rows, pi, samples)


def _emit(row, on_row):
    if on_row is not None:
        on_row(row)


def exact_pmd_run(game: DynamicGame, cfg: PmdConfig, stream: RngStream,
                  mfg: MeanFieldGame | None = None, on_row=None) -> LearnResult:
    """``exact_pmd`` on the companion MFG, traced like the sampled learners.

    No trajectories are consumed by the updates; the N-player columns still
    come from sampled play of the averaged policy.
    """
    check_tau_range(cfg.tau)
    mfg = mfg if mfg is not None else game.mean_field()
    if mfg is None:
        raise ValueError("exact mirror descent needs a mean-field companion")
    target = normalized(mfg) if cfg.normalize_rewards else mfg
    H, S, A = game.horizon, game.n_states, game.n_actions
    pi = np.full((H, S, A), 1.0 / A)
    total = pi.copy()
    tracer = _Tracer(game, mfg, cfg, stream.child(2))
    if tracer.due(0):
        _emit(tracer.record(0, 0, pi), on_row)
    for t in range(cfg.epochs):
        Q = q_backward(target, pi, cfg.tau).values
        pi = _pmd_step(pi, Q, t, cfg)
        total += pi
        if tracer.due(t + 1):
            _emit(tracer.record(t + 1, 0, total / (t + 2)), on_row)
    return LearnResult(Policy(total / (cfg.epochs + 1)), tracer.rows, pi, 0)
