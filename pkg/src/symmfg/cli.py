"""Command-line runner: ``symmfg run | inspect | dump-env``.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.
Progress goes to standard error; data goes to files and standard output.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, load_config
from .core import Policy, RngStream, entropy
from .envs import dump_env, load_env, make_env
from .learn import (
    TRACE_COLUMNS,
    PmdConfig,
    TdConfig,
    exact_pmd_run,
    flow_weighted_mse,
    ipmd,
    symm_pmd,
    td_learn,
)
from .mfg import check_monotonicity, induce_flow, mfg_exploitability, normalized, q_backward
from .sim import dump_trajectories, estimate_nplayer_exploitability, simulate
from .symmetry import (
    GridFunction,
    check_kappa_sparsity,
    estimate_alpha_beta,
    estimate_lipschitz_modulus,
    grid_size,
)

log = logging.getLogger("symmfg")

CHECKS = ("alpha-beta", "monotonicity", "sparsity", "lipschitz", "summary", "exploitability")
GAME_CHECKS = ("alpha-beta", "monotonicity", "sparsity", "lipschitz")
POLICY_CHECKS = ("summary", "exploitability")
LIPSCHITZ_GRID_CAP = 20_000


class UsageError(Exception):
    pass


# --- building blocks ----------------------------------------------------------


def _build_env(exp):
    env = exp["environment"]
    if env["file"] is not None:
        return load_env(env["file"])
    try:
        return make_env(env["name"], **env["params"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"environment: {exc}", exp.params_line,
                          str(exp.source or "<config>")) from None


def _pmd_config(exp) -> PmdConfig:
    a, e = exp["algorithm"], exp["evaluation"]
    td = TdConfig(
        epochs=a["td"]["epochs"],
        tau=a["td"]["tau"],
        delta=a["td"]["delta"],
        use_all_agents=a["td"]["use_all_agents"],
        clip_qmax=a["td"]["clip_qmax"],
        normalize_rewards=a["normalize_rewards"],
        pilot_episodes=a["td"]["pilot_episodes"],
    )
    return PmdConfig(
        epochs=a["epochs"],
        td=td,
        tau=a["tau"],
        mixing_offset=a["mixing_offset"],
        normalize_rewards=a["normalize_rewards"],
        eval_every=e["every"],
        nplayer_every=e["nplayer_every"],
        nplayer_episodes=e["nplayer_episodes"],
        workers=exp["workers"],
    )


def _alpha_beta(game, mfg, mode, budget, seed, policy=None):
    if mode == "off" or mfg is None:
        return None
    try:
        rep = estimate_alpha_beta(game, mfg, mode, budget, seed, policy)
    except ValueError as exc:
        log.warning("exact alpha/beta infeasible (%s); falling back to sampled mode", exc)
        rep = estimate_alpha_beta(game, mfg, "sampled", budget, seed, policy)
    return rep


def _alpha_beta_dict(rep):
    if rep is None:
        return None
    return {"alpha": rep.alpha, "beta": rep.beta, "mode": rep.mode,
            "lower_bound": rep.lower_bound, "samples_used": rep.samples_used}


def _finite(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _summary_text(s: dict) -> str:
    w = 30
    lines = [f"{'algorithm':<{w}} {s['algorithm']}",
             f"{'environment':<{w}} {s['environment']} (N={s['n_agents']}, H={s['horizon']})",
             f"{'samples_consumed':<{w}} {s['samples_consumed']}",
             f"{'wall_time_s':<{w}} {s['wall_time_s']:.2f}"]
    ab = s.get("alpha_beta")
    if ab:
        bound = " (lower bound)" if ab["lower_bound"] else ""
        lines.append(f"{'alpha, beta':<{w}} {ab['alpha']:.6g}, {ab['beta']:.6g} [{ab['mode']}{bound}]")
    for key in ("mfg_exploitability", "mfg_exploitability_raw", "mfg_exploitability_tau",
                "nplayer_exploitability_mean", "nplayer_exploitability_stderr",
                "flow_weighted_mse"):
        if s.get(key) is not None:
            lines.append(f"{key:<{w}} {s[key]:.6g}")
    return "\n".join(lines)


# --- run ------------------------------------------------------------------------


def cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run needs --config")
    exp = load_config(args.config)
    raw = exp.raw
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        raw["workers"] = args.workers
    if args.out is not None:
        raw["output"] = args.out
    if args.trajectories is not None:
        raw["evaluation"]["trajectories"] = args.trajectories
    if raw["output"] is None:
        raise UsageError("no output directory: set 'output' in the config or pass --out")

    game, mfg = _build_env(exp)
    out = Path(raw["output"])
    out.mkdir(parents=True, exist_ok=True)
    env_path = out / "env.json"
    dump_env(game, env_path)
    resolved = json.loads(json.dumps(raw))
    resolved["environment"] = {"name": None, "file": str(env_path.resolve()), "params": {}}
    (out / "config.resolved.yaml").write_text(
        "# resolved configuration; rerun with: symmfg run --config config.resolved.yaml\n"
        + type(exp)(resolved).dump())

    seed = raw["seed"]
    stream = RngStream(seed)
    algo = raw["algorithm"]["name"]
    evaluation = raw["evaluation"]
    columns = TRACE_COLUMNS if evaluation["wall_time"] else TRACE_COLUMNS[:-1]
    t0 = time.perf_counter()
    summary = {"algorithm": algo, "environment": game.name, "n_agents": game.n_agents,
               "horizon": game.horizon, "seed": seed}
    final_policy = None

    if algo == "td-eval":
        td_cols = ("epoch", "samples_consumed", "flow_weighted_mse") + \
            (("wall_time_s",) if evaluation["wall_time"] else ())
        cfg = _pmd_config(exp).td
        pi = Policy.uniform(game.horizon, game.n_states, game.n_actions)
        Q = td_learn(game, pi, cfg, stream.child(1), raw["workers"])
        io.save_qtable(out / "qtable.txt", Q)
        mse = None
        if mfg is not None:
            target = normalized(mfg) if cfg.normalize_rewards else mfg
            mse = flow_weighted_mse(Q, q_backward(target, pi, cfg.tau), induce_flow(mfg, pi))
        samples = cfg.epochs + (cfg.pilot_episodes if cfg.delta is None and cfg.epochs else 0)
        with io.TraceWriter(out / "trace.tsv", td_cols) as tw:
            tw.write({"epoch": cfg.epochs, "samples_consumed": samples,
                      "flow_weighted_mse": math.nan if mse is None else mse,
                      "wall_time_s": time.perf_counter() - t0})
        summary.update(samples_consumed=samples, flow_weighted_mse=mse)
        final_policy = pi
    else:
        cfg = _pmd_config(exp)
        runner = {"symm-pmd": symm_pmd, "ipmd": ipmd, "exact-pmd": exact_pmd_run}[algo]
        with io.TraceWriter(out / "trace.tsv", columns) as tw:
            res = runner(game, cfg, stream, mfg, on_row=tw.write)
        io.save_policies(out / "policy.txt", res.policy)
        final_policy = res.policy
        last = res.trace[-1] if res.trace else {}
        summary["samples_consumed"] = res.samples
        for key in TRACE_COLUMNS[2:-1]:
            summary[key] = _finite(last.get(key))
        if summary["nplayer_exploitability_mean"] is None and mfg is not None \
                and cfg.nplayer_episodes > 0:
            est = estimate_nplayer_exploitability(game, mfg, res.policy, cfg.nplayer_episodes,
                                                  stream.child(2), workers=cfg.workers)
            scale = (game.reward_bounds[1] - game.reward_bounds[0]) if cfg.normalize_rewards else 1
            summary["nplayer_exploitability_mean"] = est.mean / scale
            summary["nplayer_exploitability_stderr"] = est.std_error / scale

    ab_cfg = evaluation["alpha_beta"]
    shared = final_policy if isinstance(final_policy, Policy) else None
    summary["alpha_beta"] = _alpha_beta_dict(
        _alpha_beta(game, mfg, ab_cfg["mode"], ab_cfg["budget"], seed, shared))

    n_traj = evaluation["trajectories"]
    if n_traj:
        tr_stream = stream.child(3)
        s, a, r = simulate(game, final_policy, [tr_stream.child(e) for e in range(n_traj)],
                           raw["workers"])
        dump_trajectories(out / "trajectories.tsv", s, a, r)

    summary["wall_time_s"] = time.perf_counter() - t0
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    text = _summary_text(summary)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return 0


# --- inspect --------------------------------------------------------------------


def _is_env_file(path: Path) -> bool:
    head = path.read_text()[:200].lstrip()
    return head.startswith("{")


def _inspect_game(game, mfg, checks, args) -> dict:
    report = {}
    S, A = game.n_states, game.n_actions
    if "alpha-beta" in checks:
        rep = estimate_alpha_beta(game, mfg, args.mode, args.budget, args.seed)
        report["alpha-beta"] = {**_alpha_beta_dict(rep),
                                "alpha_witness": _witness(rep.alpha_witness),
                                "beta_witness": _witness(rep.beta_witness)}
    if "monotonicity" in checks:
        rep = check_monotonicity(mfg, args.budget, np.random.default_rng(args.seed))
        report["monotonicity"] = {
            "violated": rep.violated, "p_independent_of_mu": rep.p_independent_of_mu,
            "min_inner_product": rep.min_inner_product,
            "max_inner_product": rep.max_inner_product,
            "boundary": rep.boundary, "monotone": rep.monotone,
            "pairs_tested": rep.pairs_tested,
        }
    if "sparsity" in checks:
        cells = {}
        for s in range(S):
            for a in range(A):
                cert = check_kappa_sparsity(lambda c, s=s, a=a: game.reward(0, s, a, c),
                                            {(s, a)}, S, A, game.n_agents - 1,
                                            trials=max(1000, args.trials), seed=args.seed,
                                            count_table=True)
                cells[f"{s},{a}"] = {"holds": cert.holds, "trials": cert.trials}
        report["sparsity"] = {"kappa": 1, "agent": 0, "seed": args.seed,
                              "all_cells": all(c["holds"] for c in cells.values()),
                              "cells": cells}
    if "lipschitz" in checks:
        K = game.n_agents - 1
        G = grid_size(K, S * A)
        if G > LIPSCHITZ_GRID_CAP:
            report["lipschitz"] = {"skipped": f"grid has {G} points (cap {LIPSCHITZ_GRID_CAP})"}
        else:
            g = GridFunction.tabulate(lambda c: [game.reward(0, s, a, c) for s in range(S)
                                                 for a in range(A)], K, S, A)
            report["lipschitz"] = {
                "agent": 0, "grid_points": G,
                "reward_modulus_L1": estimate_lipschitz_modulus(g, "L1"),
                "reward_modulus_L2": estimate_lipschitz_modulus(g, "L2"),
            }
    return report


def _witness(w):
    if w is None:
        return None
    i, s, a, prof = w
    return {"agent": int(i), "state": int(s), "action": int(a), "profile": prof.tolist()}


def _inspect_policy(policies, checks, args) -> dict:
    report = {}
    tables = np.stack([p.table for p in policies])
    if "summary" in checks:
        report["summary"] = {"policies": len(policies), "shape": list(tables.shape[1:]),
                             "min_probability": float(tables.min()),
                             "mean_entropy": float(entropy(tables).mean())}
    if "exploitability" in checks:
        if not args.env:
            raise UsageError("the exploitability check needs --env")
        game, mfg = load_env(args.env)
        nm = normalized(mfg)
        if len(policies) == 1:
            rep = mfg_exploitability(nm, policies[0])
            report["exploitability"] = {"mfg_exploitability": rep.value,
                                        "mfg_exploitability_raw": rep.value * nm.scale}
        else:
            report["exploitability"] = {}
        if args.episodes > 0:
            pol = policies[0] if len(policies) == 1 else policies
            est = estimate_nplayer_exploitability(game, mfg, pol, args.episodes,
                                                  RngStream(args.seed).child(2),
                                                  workers=args.workers or 1)
            report["exploitability"].update(nplayer_exploitability_mean=est.mean / nm.scale,
                                            nplayer_exploitability_stderr=est.std_error / nm.scale)
    return report


def _print_report(report: dict, prefix="") -> None:
    for k, v in report.items():
        if isinstance(v, dict):
            print(f"{prefix}{k}:")
            _print_report(v, prefix + "  ")
        else:
            print(f"{prefix}{k}: {v}")


def cmd_inspect(args) -> int:
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise UsageError(f"unknown check(s) {bad}; choose from {list(CHECKS)}")
    path = Path(args.path)
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    if _is_env_file(path):
        wrong = [c for c in checks if c not in GAME_CHECKS]
        if wrong:
            raise UsageError(f"check(s) {wrong} apply to policy files, not games")
        game, mfg = load_env(path)
        report = {"artifact": "game", "environment": game.name,
                  **_inspect_game(game, mfg, checks, args)}
    else:
        wrong = [c for c in checks if c not in POLICY_CHECKS]
        if wrong:
            raise UsageError(f"check(s) {wrong} apply to games, not policy files")
        report = {"artifact": "policy", **_inspect_policy(io.load_policies(path), checks, args)}
    _print_report(report)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1) + "\n")
    return 0


# --- dump-env ---------------------------------------------------------------------


def _parse_setting(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise UsageError(f"--set expects key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def cmd_dump_env(args) -> int:
    if not args.out:
        raise UsageError("dump-env needs --out")
    if args.config:
        if args.env or args.set:
            raise UsageError("use either --config or --env/--set")
        game, _ = _build_env(load_config(args.config))
    else:
        if not args.env:
            raise UsageError("dump-env needs --config or --env")
        params = dict(_parse_setting(s) for s in args.set)
        if args.seed is not None:
            params["seed"] = args.seed
        try:
            game, _ = make_env(args.env, **params)
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from None
    dump_env(game, args.out)
    print(args.out)
    return 0


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="root seed, overrides the config")
    common.add_argument("--workers", type=int, help="concurrent episode workers")
    common.add_argument("--out", help="output directory (run) or file (inspect, dump-env)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="symmfg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run an experiment from a config")
    run.add_argument("--trajectories", type=int, metavar="E",
                     help="also dump E episodes of the final policy")
    run.set_defaults(func=cmd_run)

    insp = sub.add_parser("inspect", parents=[common], help="diagnostics for a game or policy file")
    insp.add_argument("path", help="environment file (from dump-env) or policy file")
    insp.add_argument("--checks", default="alpha-beta",
                      help=f"comma-separated, from {', '.join(CHECKS)}")
    insp.add_argument("--mode", choices=("exact", "sampled"), default="sampled")
    insp.add_argument("--budget", type=int, default=2000, help="profiles or pairs to sample")
    insp.add_argument("--trials", type=int, default=1000, help="sparsity trials per cell")
    insp.add_argument("--env", help="environment file, for policy exploitability")
    insp.add_argument("--episodes", type=int, default=0, help="paired N-player episodes")
    insp.set_defaults(func=cmd_inspect)

    dump = sub.add_parser("dump-env", parents=[common], help="build an environment and save it")
    dump.add_argument("--env", help="environment name")
    dump.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                      help="environment parameter (repeatable)")
    dump.set_defaults(func=cmd_dump_env)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "seed", None) is None and args.command == "inspect":
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
