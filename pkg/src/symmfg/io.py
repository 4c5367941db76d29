"""Text formats for policies, Q-tables and metric traces.

Tables are tab-separated with a versioned ``#`` header. Floats are written
with ``repr`` so a save/load round trip reproduces every bit.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import Policy, QTable

POLICY_HEADER = "# symmfg-policy v1"
QTABLE_HEADER = "# symmfg-qtable v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def save_policies(path, policies) -> None:
    """One file for one shared policy or a list of per-agent policies.

    Rows are ``agent step state action probability``; a shared policy is
    written as agent 0 of 1.
    """
    if isinstance(policies, Policy):
        policies = [policies]
    tables = [p.table if isinstance(p, Policy) else np.asarray(p) for p in policies]
    H, S, A = tables[0].shape
    with Path(path).open("w") as fh:
        fh.write(f"{POLICY_HEADER}\n# agents {len(tables)} horizon {H} states {S} actions {A}\n")
        fh.write("agent\tstep\tstate\taction\tprobability\n")
        for i, t in enumerate(tables):
            for h in range(H):
                for s in range(S):
                    for a in range(A):
                        fh.write(f"{i}\t{h}\t{s}\t{a}\t{_fmt(t[h, s, a])}\n")


def _read_table(path, header):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != header:
        raise ValueError(f"{path}: expected header {header!r}")
    meta_tokens = lines[1].lstrip("# ").split()
    meta = {k: float(v) if "." in v or "e" in v else int(v)
            for k, v in zip(meta_tokens[::2], meta_tokens[1::2])}
    rows = [line.split("\t") for line in lines[3:] if line.strip()]
    return meta, rows


def load_policies(path) -> list[Policy]:
    meta, rows = _read_table(path, POLICY_HEADER)
    out = np.zeros((meta["agents"], meta["horizon"], meta["states"], meta["actions"]))
    for i, h, s, a, p in rows:
        out[int(i), int(h), int(s), int(a)] = float(p)
    return [Policy(t) for t in out]


def load_policy(path) -> Policy:
    pols = load_policies(path)
    if len(pols) != 1:
        raise ValueError(f"{path} holds {len(pols)} policies, expected one")
    return pols[0]


def save_qtable(path, q: QTable) -> None:
    H, S, A = q.values.shape
    with Path(path).open("w") as fh:
        fh.write(f"{QTABLE_HEADER}\n# horizon {H} states {S} actions {A} tau {_fmt(q.tau)}\n")
        fh.write("step\tstate\taction\tvalue\n")
        for h in range(H):
            for s in range(S):
                for a in range(A):
                    fh.write(f"{h}\t{s}\t{a}\t{_fmt(q.values[h, s, a])}\n")


def load_qtable(path) -> QTable:
    meta, rows = _read_table(path, QTABLE_HEADER)
    v = np.zeros((meta["horizon"], meta["states"], meta["actions"]))
    for h, s, a, x in rows:
        v[int(h), int(s), int(a)] = float(x)
    return QTable(v, float(meta["tau"]))


class TraceWriter:
    """Append-only tab-separated metric trace, flushed after every row."""

    def __init__(self, path, columns):
        self.columns = tuple(columns)
        self._fh = Path(path).open("w")
        self._fh.write("\t".join(self.columns) + "\n")
        self._fh.flush()

    def write(self, row: dict) -> None:
        cells = []
        for c in self.columns:
            v = row[c]
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif v is None or (isinstance(v, float) and math.isnan(v)):
                cells.append("nan")
            else:
                cells.append(_fmt(v))
        self._fh.write("\t".join(cells) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split("\t")
    out = []
    for line in lines[1:]:
        vals = line.split("\t")
        out.append({c: (int(v) if c in ("epoch", "samples_consumed") else float(v))
                    for c, v in zip(cols, vals)})
    return out
