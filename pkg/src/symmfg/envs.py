"""Benchmark games, each paired with its analytic mean-field companion.

Every environment draws its per-agent parameters once from ``seed`` at
construction. ``describe()`` returns a JSON-ready description holding those
draws, and ``load_env`` rebuilds the identical game from it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import DynamicGame, MeanFieldGame, RngStream, uniform_rho0

ENV_FORMAT = "symmfg-env"
ENV_VERSION = 1


def _onehot(idx, n):
    return np.eye(n, dtype=float)[idx]


def _others(full_counts, own_idx, n):
    """Per-agent counts of the others, from per-episode totals.

    ``full_counts`` is (E, n) and ``own_idx`` is (E, N); returns (E, N, n).
    """
    return full_counts[:, None, :] - _onehot(own_idx, n)


def _bincount_rows(idx, n):
    E = idx.shape[0]
    offs = (np.arange(E) * n)[:, None]
    return np.bincount((idx + offs).ravel(), minlength=E * n).reshape(E, n).astype(float)


class _Described:
    name = ""

    def describe(self) -> dict:
        return {
            "format": ENV_FORMAT,
            "version": ENV_VERSION,
            "name": self.name,
            "config": _config_dict(self.config),
            "params": {k: _jsonable(v) for k, v in self.params().items()},
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _config_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = _jsonable(v) if not isinstance(v, tuple) else list(v)
    return out


# --- A-RPS ------------------------------------------------------------------

RPS_LABELS = ("R", "P", "S")
RPS_BASE_U = np.array([2.0, 4.0, 6.0])
RPS_BASE_V = np.array([1.0, 2.0, 3.0])
# state s loses to LOSE[s] and beats BEAT[s]
RPS_LOSE = np.array([1, 2, 0])
RPS_BEAT = np.array([2, 0, 1])


@dataclass(frozen=True)
class ArpsConfig:
    N: int = 2000
    H: int = 10
    noise_scale: float = 0.1
    crowd_cost: float = 0.0
    crowd_cost_spread: float = 0.0
    include_self: bool = False
    rho0: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("A-RPS needs N >= 2")
        if self.noise_scale < 0 or self.crowd_cost_spread < 0:
            raise ValueError("noise scales must be non-negative")


class ArpsGame(_Described, DynamicGame):
    """Rock-paper-scissors population game with per-agent payoff coefficients.

    Rewards depend on the state marginal and action marginal of the other
    agents (or of everyone when ``include_self`` is set); moves are
    deterministic, ``s' = a``.
    """

    name = "arps"

    def __init__(self, config: ArpsConfig, u, v, c):
        self.config = config
        self.n_agents = config.N
        self.n_states = self.n_actions = 3
        self.horizon = config.H
        self.rho0 = np.asarray(config.rho0 if config.rho0 is not None else uniform_rho0(3), float)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.reward_bounds = (-float(self.c.max() + self.u.max()), float(self.v.max()))
        self._denom = config.N if config.include_self else config.N - 1
        self._mfg = ArpsMFG(self)

    def params(self):
        return {"u": self.u, "v": self.v, "c": self.c}

    def _sigmas(self, s, a, others):
        counts = np.asarray(others, dtype=float)
        if self.config.include_self:
            counts = counts.copy()
            counts[s, a] += 1
        return counts.sum(axis=1) / self._denom, counts.sum(axis=0) / self._denom

    def transition(self, i, s, a, others):
        return _onehot(a, 3)

    def reward(self, i, s, a, others):
        st, ac = self._sigmas(s, a, others)
        return float(-self.c[i] * ac[a] - self.u[i, s] * st[RPS_LOSE[s]]
                     + self.v[i, s] * st[RPS_BEAT[s]])

    def profile_kernels(self, states, actions):
        st_full = _bincount_rows(states, 3)
        ac_full = _bincount_rows(actions, 3)
        if self.config.include_self:
            st = np.broadcast_to(st_full[:, None, :], states.shape + (3,))
            ac = np.broadcast_to(ac_full[:, None, :], states.shape + (3,))
        else:
            st = _others(st_full, states, 3)
            ac = _others(ac_full, actions, 3)
        st = st / self._denom
        ac = ac / self._denom
        idx = np.arange(self.n_agents)
        take = lambda arr, j: np.take_along_axis(arr, j[..., None], axis=-1)[..., 0]
        rewards = (-self.c[idx] * take(ac, actions)
                   - self.u[idx, states] * take(st, RPS_LOSE[states])
                   + self.v[idx, states] * take(st, RPS_BEAT[states]))
        return _onehot(actions, 3), rewards

    def mean_field(self):
        return self._mfg


class ArpsMFG(MeanFieldGame):
    def __init__(self, game: ArpsGame):
        self.n_states = self.n_actions = 3
        self.horizon = game.horizon
        self.rho0 = game.rho0
        self.reward_bounds = game.reward_bounds
        self.u = game.u.mean(axis=0)
        self.v = game.v.mean(axis=0)
        self.c = float(game.c.mean())
        self._P = np.broadcast_to(np.eye(3)[None, :, :], (3, 3, 3)).copy()

    def transition_matrix(self, mu):
        return self._P

    def reward_matrix(self, mu):
        mu = np.asarray(mu, dtype=float)
        st, ac = mu.sum(axis=1), mu.sum(axis=0)
        per_state = -self.u * st[RPS_LOSE] + self.v * st[RPS_BEAT]
        return per_state[:, None] - self.c * ac[None, :]


def make_arps(cfg: ArpsConfig = ArpsConfig()):
    rng = RngStream(cfg.seed).generator()
    eps = rng.uniform(-cfg.noise_scale, cfg.noise_scale, size=(cfg.N, 3))
    eps_bar = rng.uniform(-cfg.noise_scale, cfg.noise_scale, size=(cfg.N, 3))
    c = rng.uniform(cfg.crowd_cost - cfg.crowd_cost_spread,
                    cfg.crowd_cost + cfg.crowd_cost_spread, size=cfg.N)
    game = ArpsGame(cfg, RPS_BASE_U + eps, RPS_BASE_V + eps_bar, np.clip(c, 0.0, None))
    return game, game.mean_field()


# --- A-SIS ------------------------------------------------------------------

SIS_I, SIS_H = 0, 1
SIS_D, SIS_U = 0, 1


@dataclass(frozen=True)
class AsisConfig:
    N: int = 1000
    H: int = 20
    susceptibility: tuple[float, float] = (0.7, 0.9)
    healing: tuple[float, float] = (0.15, 0.25)
    isolation_aversion: tuple[float, float] = (0.2, 0.4)
    seed: int = 0

    def __post_init__(self):
        for name in ("susceptibility", "healing", "isolation_aversion"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} range must lie in [0, 1]")


class AsisGame(_Described, DynamicGame):
    """Infection game: states (I, H), actions (D = distance, U = go out)."""

    name = "asis"

    def __init__(self, config: AsisConfig, alpha, theta, xi):
        self.config = config
        self.n_agents = config.N
        self.n_states = self.n_actions = 2
        self.horizon = config.H
        self.rho0 = uniform_rho0(2)
        self.alpha = np.asarray(alpha, dtype=float)
        self.theta = np.asarray(theta, dtype=float)
        self.xi = np.asarray(xi, dtype=float)
        self.reward_bounds = (-(1.0 + config.isolation_aversion[1]), 0.0)
        self._mfg = AsisMFG(self)

    def params(self):
        return {"alpha": self.alpha, "theta": self.theta, "xi": self.xi}

    def _p_infected(self, i, s, a, frac_iu):
        if s == SIS_I:
            return 1.0 - self.theta[i]
        return self.alpha[i] * frac_iu if a == SIS_U else 0.0

    def transition(self, i, s, a, others):
        denom = max(self.n_agents - 1, 1)
        p = self._p_infected(i, s, a, others[SIS_I, SIS_U] / denom)
        return np.array([p, 1.0 - p])

    def reward(self, i, s, a, others):
        return float(-(s == SIS_I) - self.xi[i] * (a == SIS_D))

    def profile_kernels(self, states, actions):
        iu = (states == SIS_I) & (actions == SIS_U)
        frac = (iu.sum(axis=1, keepdims=True) - iu) / max(self.n_agents - 1, 1)
        p = np.where(states == SIS_I, 1.0 - self.theta,
                     np.where(actions == SIS_U, self.alpha * frac, 0.0))
        probs = np.stack([p, 1.0 - p], axis=-1)
        rewards = -(states == SIS_I).astype(float) - self.xi * (actions == SIS_D)
        return probs, rewards

    def mean_field(self):
        return self._mfg


class AsisMFG(MeanFieldGame):
    """Companion with population-mean parameters; each kernel is affine in them."""

    def __init__(self, game: AsisGame):
        self.n_states = self.n_actions = 2
        self.horizon = game.horizon
        self.rho0 = game.rho0
        self.reward_bounds = game.reward_bounds
        self.alpha = float(game.alpha.mean())
        self.theta = float(game.theta.mean())
        self.xi = float(game.xi.mean())

    def transition_matrix(self, mu):
        mu = np.asarray(mu, dtype=float)
        p = np.empty((2, 2))
        p[SIS_I, :] = 1.0 - self.theta
        p[SIS_H, SIS_D] = 0.0
        p[SIS_H, SIS_U] = self.alpha * mu[SIS_I, SIS_U]
        return np.stack([p, 1.0 - p], axis=-1)

    def reward_matrix(self, mu):
        r = np.zeros((2, 2))
        r[SIS_I, :] -= 1.0
        r[:, SIS_D] -= self.xi
        return r


def make_asis(cfg: AsisConfig = AsisConfig()):
    rng = RngStream(cfg.seed).generator()
    alpha = rng.uniform(*cfg.susceptibility, size=cfg.N)
    theta = rng.uniform(*cfg.healing, size=cfg.N)
    xi = rng.uniform(*cfg.isolation_aversion, size=cfg.N)
    game = AsisGame(cfg, alpha, theta, xi)
    return game, game.mean_field()


# --- asymmetric congestion ---------------------------------------------------


@dataclass(frozen=True)
class CongestionConfig:
    """Congestion game settings.

    Curves are ``h_i(s, a, k) = w_i(s, a) * (1 - k / N)`` with per-agent
    slopes ``w_i`` drawn around a shared profile; ``heterogeneity`` is the
    half-width of the per-agent perturbation of slopes and base rewards.
    """

    N: int = 100
    H: int = 5
    n_states: int = 3
    n_actions: int = 3
    heterogeneity: float = 0.05
    seed: int = 0


def interpolate_curve(curve, u, scale: int):
    """Piecewise-linear continuation of ``curve[k]`` to ``u`` in [0, 1] via ``scale * u``."""
    curve = np.asarray(curve, dtype=float)
    x = np.clip(np.asarray(u, dtype=float) * scale, 0.0, curve.shape[-1] - 1)
    lo = np.floor(x).astype(int)
    hi = np.minimum(lo + 1, curve.shape[-1] - 1)
    frac = x - lo
    take = lambda k: np.take_along_axis(curve, np.asarray(k)[..., None], axis=-1)[..., 0] \
        if curve.ndim > 1 else curve[k]
    return (1.0 - frac) * take(lo) + frac * take(hi)


class CongestionGame(_Described, DynamicGame):
    """Player-specific congestion game with population-free dynamics.

    Agent ``i`` at ``(s, a)`` earns ``h_i(s, a, k) + r_i(s, a)`` where ``k``
    is the number of other agents at the same cell.
    """

    name = "congestion"

    def __init__(self, config: CongestionConfig, curves, base, kernel, slopes=None):
        self.config = config
        self.n_agents = config.N
        self.n_states, self.n_actions = config.n_states, config.n_actions
        self.horizon = config.H
        self.rho0 = uniform_rho0(config.n_states)
        self.curves = np.asarray(curves, dtype=float)  # (N, S, A, N + 1)
        self.base = np.asarray(base, dtype=float)  # (N, S, A)
        self.kernel = np.asarray(kernel, dtype=float)  # (S, A, S)
        self.slopes = None if slopes is None else np.asarray(slopes, dtype=float)
        diffs = np.diff(self.curves, axis=-1)
        if np.any(diffs > 0):
            i, s, a, k = (int(x) for x in np.argwhere(diffs > 0)[0])
            raise ValueError(f"congestion curve increases: agent {i}, cell {(s, a)}, "
                             f"h({k})={self.curves[i, s, a, k]} < h({k + 1})="
                             f"{self.curves[i, s, a, k + 1]}")
        if self.curves.min() < 0 or self.curves.max() > 1:
            raise ValueError("congestion curves must take values in [0, 1]")
        self.reward_bounds = (0.0, 2.0)
        self._mfg = CongestionMFG(self)

    def params(self):
        if self.slopes is not None:
            return {"slopes": self.slopes, "base": self.base, "kernel": self.kernel}
        return {"curves": self.curves, "base": self.base, "kernel": self.kernel}

    def transition(self, i, s, a, others):
        return self.kernel[s, a]

    def reward(self, i, s, a, others):
        return float(self.curves[i, s, a, int(others[s, a])] + self.base[i, s, a])

    def profile_kernels(self, states, actions):
        A = self.n_actions
        cells = states * A + actions
        full = _bincount_rows(cells, self.n_states * A)
        k = np.take_along_axis(full, cells, axis=1).astype(int) - 1
        idx = np.arange(self.n_agents)
        rewards = self.curves[idx, states, actions, k] + self.base[idx, states, actions]
        return self.kernel[states, actions], rewards

    def mean_field(self):
        return self._mfg


class CongestionMFG(MeanFieldGame):
    """Companion averaging the interpolated curves over agents.

    Interpolation uses ``N - 1`` as the grid scale, the number of opponents,
    so the companion matches the N-player rewards on grid profiles exactly.
    """

    def __init__(self, game: CongestionGame):
        self.n_states, self.n_actions = game.n_states, game.n_actions
        self.horizon = game.horizon
        self.rho0 = game.rho0
        self.reward_bounds = game.reward_bounds
        self.mean_curve = game.curves.mean(axis=0)
        self.mean_base = game.base.mean(axis=0)
        self.scale = max(game.n_agents - 1, 1)
        self.kernel = game.kernel

    def transition_matrix(self, mu):
        return self.kernel

    def reward_matrix(self, mu):
        return interpolate_curve(self.mean_curve, mu, self.scale) + self.mean_base


def make_congestion(cfg: CongestionConfig = CongestionConfig()):
    rng = RngStream(cfg.seed).generator()
    S, A, N, het = cfg.n_states, cfg.n_actions, cfg.N, cfg.heterogeneity
    slope_mean = rng.uniform(0.4, 0.9, size=(S, A))
    base_mean = rng.uniform(0.0, 0.5, size=(S, A))
    kernel = rng.dirichlet(np.ones(S), size=(S, A))
    slopes = np.clip(slope_mean + rng.uniform(-het, het, size=(N, S, A)), 0.01, 1.0)
    base = np.clip(base_mean + rng.uniform(-het, het, size=(N, S, A)), 0.0, 1.0)
    game = _congestion_from_slopes(cfg, slopes, base, kernel)
    return game, game.mean_field()


def _congestion_from_slopes(cfg, slopes, base, kernel):
    k = np.arange(cfg.N + 1)
    curves = np.asarray(slopes)[..., None] * (1.0 - k / cfg.N)
    return CongestionGame(cfg, curves, base, kernel, slopes=slopes)


# --- exactly symmetric control ------------------------------------------------


@dataclass(frozen=True)
class SymmetricConfig:
    """Identical agents with linear crowd aversion and herding dynamics.

    ``R(s, a, mu) = b(s, a) - crowd * mu(s, a)`` and
    ``P(. | s, a, mu) = (1 - herding) P0(. | s, a) + herding * m``, with
    ``m`` the state marginal of ``mu``.
    """

    N: int = 200
    H: int = 3
    n_states: int = 2
    n_actions: int = 2
    crowd: float = 0.5
    herding: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_states > 4 or self.n_actions > 4 or self.H > 5:
            raise ValueError("symmetric fixture is meant for |S|, |A| <= 4 and H <= 5")


class SymmetricGame(_Described, DynamicGame):
    """Exactly symmetric game; population terms vanish when N == 1."""

    name = "symmetric"

    def __init__(self, config: SymmetricConfig, base, kernel):
        self.config = config
        self.n_agents = config.N
        self.n_states, self.n_actions = config.n_states, config.n_actions
        self.horizon = config.H
        self.rho0 = uniform_rho0(config.n_states)
        self.base = np.asarray(base, dtype=float)
        self.kernel = np.asarray(kernel, dtype=float)
        self.reward_bounds = (-config.crowd, 1.0)
        self._mfg = SymmetricMFG(self)

    def params(self):
        return {"base": self.base, "kernel": self.kernel}

    def _mu(self, others):
        if self.n_agents == 1:
            return None
        return np.asarray(others, dtype=float) / (self.n_agents - 1)

    def transition(self, i, s, a, others):
        mu = self._mu(others)
        if mu is None:
            return self.kernel[s, a].copy()
        lam = self.config.herding
        return (1 - lam) * self.kernel[s, a] + lam * mu.sum(axis=1)

    def reward(self, i, s, a, others):
        mu = self._mu(others)
        crowd = 0.0 if mu is None else self.config.crowd * mu[s, a]
        return float(self.base[s, a] - crowd)

    def profile_kernels(self, states, actions):
        S, A, N = self.n_states, self.n_actions, self.n_agents
        P0 = self.kernel[states, actions]
        r0 = self.base[states, actions]
        if N == 1:
            return P0, r0
        lam, crowd = self.config.herding, self.config.crowd
        m = _others(_bincount_rows(states, S), states, S) / (N - 1)
        cells = states * A + actions
        full = _bincount_rows(cells, S * A)
        same = (np.take_along_axis(full, cells, axis=1) - 1) / (N - 1)
        return (1 - lam) * P0 + lam * m, r0 - crowd * same

    def mean_field(self):
        return self._mfg


class SymmetricMFG(MeanFieldGame):
    def __init__(self, game: SymmetricGame):
        self.n_states, self.n_actions = game.n_states, game.n_actions
        self.horizon = game.horizon
        self.rho0 = game.rho0
        self.reward_bounds = game.reward_bounds
        self.base = game.base
        self.kernel = game.kernel
        self.crowd = game.config.crowd
        self.herding = game.config.herding

    def transition_matrix(self, mu):
        m = np.asarray(mu, dtype=float).sum(axis=1)
        return (1 - self.herding) * self.kernel + self.herding * m[None, None, :]

    def reward_matrix(self, mu):
        return self.base - self.crowd * np.asarray(mu, dtype=float)


def make_symmetric_test(cfg: SymmetricConfig = SymmetricConfig()):
    rng = RngStream(cfg.seed).generator()
    base = rng.uniform(0.0, 1.0, size=(cfg.n_states, cfg.n_actions))
    kernel = rng.dirichlet(np.ones(cfg.n_states), size=(cfg.n_states, cfg.n_actions))
    game = SymmetricGame(cfg, base, kernel)
    return game, game.mean_field()


# --- registry and description files -------------------------------------------

CONFIGS = {
    "arps": ArpsConfig,
    "asis": AsisConfig,
    "congestion": CongestionConfig,
    "symmetric": SymmetricConfig,
}
MAKERS = {
    "arps": make_arps,
    "asis": make_asis,
    "congestion": make_congestion,
    "symmetric": make_symmetric_test,
}


def make_config(name: str, **kwargs):
    try:
        cls = CONFIGS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(CONFIGS)}") from None
    known = {f.name for f in fields(cls)}
    unknown = set(kwargs) - known
    if unknown:
        raise ValueError(f"unknown {name} settings: {sorted(unknown)}")
    tuples = {f.name for f in fields(cls) if "tuple" in str(f.type)}
    kwargs = {k: tuple(v) if k in tuples and v is not None else v for k, v in kwargs.items()}
    return cls(**kwargs)


def make_env(name: str, **kwargs):
    return MAKERS[name](make_config(name, **kwargs))


def build_from_description(desc: dict):
    if desc.get("format") != ENV_FORMAT:
        raise ValueError("not an environment description")
    if desc.get("version") != ENV_VERSION:
        raise ValueError(f"unsupported environment description version {desc.get('version')}")
    name = desc["name"]
    cfg = make_config(name, **desc["config"])
    p = {k: np.asarray(v, dtype=float) for k, v in desc["params"].items()}
    if name == "arps":
        game = ArpsGame(cfg, p["u"], p["v"], p["c"])
    elif name == "asis":
        game = AsisGame(cfg, p["alpha"], p["theta"], p["xi"])
    elif name == "congestion":
        if "slopes" in p:
            game = _congestion_from_slopes(cfg, p["slopes"], p["base"], p["kernel"])
        else:
            game = CongestionGame(cfg, p["curves"], p["base"], p["kernel"])
    else:
        game = SymmetricGame(cfg, p["base"], p["kernel"])
    return game, game.mean_field()


def dump_env(game, path) -> None:
    Path(path).write_text(json.dumps(game.describe(), indent=1) + "\n")


def load_env(path):
    return build_from_description(json.loads(Path(path).read_text()))
