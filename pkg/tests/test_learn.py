import numpy as np
import pytest

from oracles import td_loop
from symmfg.core import Policy, RngStream, entropy, q_max
from symmfg.envs import (
    ArpsConfig,
    CongestionConfig,
    SymmetricConfig,
    make_arps,
    make_congestion,
    make_symmetric_test,
)
from symmfg.learn import (
    TRACE_COLUMNS,
    PmdConfig,
    TdConfig,
    estimate_delta,
    exact_pmd_run,
    flow_weighted_mse,
    ipmd,
    symm_pmd,
    td_learn,
    td_learn_independent,
    td_learning_rate,
)
from symmfg.mfg import NormalizedMFG, induce_flow, q_backward
from symmfg.sim import simulate


def replay(game, table, stream, epochs):
    eps = stream.child(1)
    s, a, r = simulate(game, table, [eps.child(m) for m in range(epochs)])
    lo, hi = game.reward_bounds
    return s, a, (r - lo) / (hi - lo)


def test_zero_epochs_zero_table():
    game, _ = make_symmetric_test(SymmetricConfig(N=10))
    q = td_learn(game, Policy.uniform(3, 2, 2), TdConfig(epochs=0), RngStream(0))
    assert np.all(q.values == 0) and q.values.shape == (3, 2, 2)


def test_learning_rate_schedule():
    assert td_learning_rate(0, 0.5) == 1.0
    assert td_learning_rate(4, 0.5) == 0.5
    assert td_learning_rate(10, 1.0) == pytest.approx(2 / 12)


@pytest.mark.parametrize("use_all", [True, False])
@pytest.mark.parametrize("tau", [0.0, 0.3])
def test_td_matches_scalar_loop(use_all, tau):
    game, _ = make_symmetric_test(SymmetricConfig(N=7, H=3))
    table = np.random.default_rng(1).dirichlet(np.ones(2), size=(3, 2))
    cfg = TdConfig(epochs=40, tau=tau, delta=0.25, use_all_agents=use_all)
    stream = RngStream(3)
    q = td_learn(game, table, cfg, stream).values
    s, a, r = replay(game, table, stream, 40)
    cols = slice(None) if use_all else slice(0, 1)
    eps = [(s[m][:, cols], a[m][:, cols], r[m][:, cols]) for m in range(40)]
    bonus = (tau * entropy(table)).tolist()
    expected = td_loop(eps, 3, 2, 2, bonus, 0.25, q_max(3, 2))
    np.testing.assert_allclose(q, expected, atol=1e-12)


def test_td_without_clip_matches_loop():
    game, _ = make_arps(ArpsConfig(N=6, H=3))
    table = np.full((3, 3, 3), 1 / 3)
    cfg = TdConfig(epochs=25, delta=0.1, clip_qmax=False, normalize_rewards=False)
    stream = RngStream(8)
    q = td_learn(game, table, cfg, stream).values
    eps_stream = stream.child(1)
    s, a, r = simulate(game, table, [eps_stream.child(m) for m in range(25)])
    expected = td_loop(list(zip(s, a, r)), 3, 3, 3, np.zeros((3, 3)).tolist(), 0.1, None)
    np.testing.assert_allclose(q, expected, atol=1e-12)


def test_td_stays_in_clip_range():
    game, _ = make_arps(ArpsConfig(N=20, H=4))
    q = td_learn(game, Policy.uniform(4, 3, 3), TdConfig(epochs=60, tau=0.4, delta=0.05),
                 RngStream(0)).values
    assert q.min() >= 0 and q.max() <= q_max(4, 3)


def test_td_error_shrinks_with_epochs():
    game, m = make_symmetric_test(SymmetricConfig(N=200))
    pi = Policy.uniform(3, 2, 2)
    nm = NormalizedMFG(m)
    flow = induce_flow(nm, pi)
    truth = q_backward(nm, pi).values
    errs = [flow_weighted_mse(td_learn(game, pi, TdConfig(epochs=M), RngStream(1)), truth, flow)
            for M in (20, 500)]
    assert errs[1] < errs[0]


def test_delta_estimate_floor():
    game, _ = make_symmetric_test(SymmetricConfig(N=10))
    det = Policy.deterministic(np.zeros((3, 2), dtype=int), 2)
    d = estimate_delta(game, det, 50, RngStream(0))
    assert 1 / 40 <= d <= 1
    assert estimate_delta(game, det, 0, RngStream(0)) == 1 / 40


def test_invalid_configs():
    with pytest.raises(ValueError):
        TdConfig(epochs=-1)
    with pytest.raises(ValueError):
        TdConfig(delta=0.0)
    with pytest.raises(ValueError):
        TdConfig(tau=-0.1)
    with pytest.raises(ValueError):
        PmdConfig(epochs=-2)
    game, _ = make_symmetric_test(SymmetricConfig(N=4))
    bad = PmdConfig(epochs=2, tau=0.5, lr_schedule=lambda t: 3.0, td=TdConfig(epochs=2))
    with pytest.raises(ValueError, match="tau"), pytest.warns(UserWarning):
        symm_pmd(game, bad, RngStream(0))


def quick_cfg(**kw):
    base = dict(epochs=4, td=TdConfig(epochs=20, delta=0.2), eval_every=1, nplayer_every=2,
                nplayer_episodes=20)
    base.update(kw)
    return PmdConfig(**base)


def test_zero_epochs_returns_uniform():
    game, _ = make_arps(ArpsConfig(N=10, H=3))
    res = symm_pmd(game, quick_cfg(epochs=0), RngStream(0))
    np.testing.assert_array_equal(res.policy.table, np.full((3, 3, 3), 1 / 3))
    assert res.samples == 0 and len(res.trace) == 1


def test_first_iterate_is_uniform():
    game, _ = make_arps(ArpsConfig(N=10, H=3))
    res = symm_pmd(game, quick_cfg(epochs=1), RngStream(0))
    np.testing.assert_array_equal(res.final_iterate, np.full((3, 3, 3), 1 / 3))


def test_iterates_respect_mixing_floor():
    game, _ = make_arps(ArpsConfig(N=10, H=3))
    for T in (2, 3, 5):
        res = symm_pmd(game, quick_cfg(epochs=T, eval_every=None, nplayer_every=None,
                                       nplayer_episodes=0), RngStream(0))
        assert res.final_iterate.min() >= 1 / (T * 3) - 1e-15
        np.testing.assert_allclose(res.final_iterate.sum(axis=-1), 1.0, atol=1e-12)


def test_trace_rows_and_samples():
    game, _ = make_arps(ArpsConfig(N=10, H=3))
    rows = []
    res = symm_pmd(game, quick_cfg(), RngStream(0), on_row=rows.append)
    assert rows == res.trace
    assert [r["epoch"] for r in rows] == [0, 1, 2, 3, 4]
    assert set(rows[0]) == set(TRACE_COLUMNS)
    assert res.samples == 4 * 20 and rows[-1]["samples_consumed"] == 80
    assert np.isnan(rows[1]["nplayer_exploitability_mean"])
    assert np.isfinite(rows[2]["nplayer_exploitability_mean"])
    lo, hi = game.reward_bounds
    for r in rows:
        assert r["mfg_exploitability"] >= -1e-12
        assert r["mfg_exploitability_raw"] == pytest.approx(r["mfg_exploitability"] * (hi - lo))


def test_symm_pmd_is_deterministic():
    game, _ = make_arps(ArpsConfig(N=10, H=3))
    a = symm_pmd(game, quick_cfg(), RngStream(4))
    b = symm_pmd(game, quick_cfg(), RngStream(4))
    np.testing.assert_array_equal(a.policy.table, b.policy.table)
    c = symm_pmd(game, quick_cfg(workers=3, td=TdConfig(epochs=600, delta=0.2), epochs=1),
                 RngStream(4))
    d = symm_pmd(game, quick_cfg(td=TdConfig(epochs=600, delta=0.2), epochs=1), RngStream(4))
    np.testing.assert_array_equal(c.policy.table, d.policy.table)


def test_single_agent_ipmd_equals_symm_pmd():
    game, _ = make_symmetric_test(SymmetricConfig(N=1, H=3))
    cfg = quick_cfg(nplayer_every=None, nplayer_episodes=0, td=TdConfig(epochs=30))
    a = symm_pmd(game, cfg, RngStream(2))
    b = ipmd(game, cfg, RngStream(2))
    np.testing.assert_array_equal(a.final_iterate, b.final_iterate[0])
    np.testing.assert_array_equal(a.policy.table, b.policy[0].table)


def test_independent_td_uses_only_own_trajectory():
    game, _ = make_symmetric_test(SymmetricConfig(N=6, H=3))
    tables = np.full((6, 3, 2, 2), 0.5)
    cfg = TdConfig(epochs=30, delta=0.3, tau=0.1)
    stream = RngStream(9)
    Q = td_learn_independent(game, tables, cfg, stream)
    s, a, r = replay(game, tables, stream, 30)
    bonus = (0.1 * entropy(tables[0])).tolist()
    for i in range(6):
        eps = [(s[m][:, i:i + 1], a[m][:, i:i + 1], r[m][:, i:i + 1]) for m in range(30)]
        np.testing.assert_allclose(Q[i], td_loop(eps, 3, 2, 2, bonus, 0.3, q_max(3, 2)),
                                   atol=1e-12)
        visited = np.zeros((3, 2, 2), dtype=bool)
        for m in range(30):
            visited[np.arange(3), s[m][:, i], a[m][:, i]] = True
        assert np.all(Q[i][~visited] == 0)


def test_ipmd_returns_per_agent_policies():
    game, _ = make_arps(ArpsConfig(N=5, H=2))
    res = ipmd(game, quick_cfg(epochs=2), RngStream(0))
    assert len(res.policy) == 5 and res.final_iterate.shape == (5, 2, 3, 3)
    assert np.isnan(res.trace[-1]["mfg_exploitability"])
    assert np.isfinite(res.trace[-1]["nplayer_exploitability_mean"])


def test_exact_pmd_run_traces_regularized_gap():
    game, _ = make_congestion(CongestionConfig(N=20, H=3))
    res = exact_pmd_run(game, quick_cfg(epochs=30, eval_every=10, nplayer_every=None,
                                        nplayer_episodes=0), RngStream(0))
    taus = [r["mfg_exploitability_tau"] for r in res.trace]
    assert [r["epoch"] for r in res.trace] == [0, 10, 20, 30]
    assert taus[-1] < taus[0]
    assert res.samples == 0
