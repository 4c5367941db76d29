"""Experiment configuration files (YAML, ``version: 1``).

Unknown keys and out-of-range values are errors. Every error carries the
line of the offending node, taken from the YAML parse tree.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .envs import CONFIGS

CONFIG_VERSION = 1
ALGORITHMS = ("symm-pmd", "ipmd", "td-eval", "exact-pmd")

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "workers": 1,
    "output": None,
    "environment": {"name": None, "file": None, "params": {}},
    "algorithm": {
        "name": "symm-pmd",
        "epochs": 100,
        "tau": 0.1,
        "mixing_offset": 0,
        "normalize_rewards": True,
        "td": {
            "epochs": 200,
            "tau": 0.0,
            "delta": None,
            "use_all_agents": True,
            "clip_qmax": True,
            "pilot_episodes": 200,
        },
    },
    "evaluation": {
        "every": None,
        "nplayer_every": None,
        "nplayer_episodes": 2000,
        "wall_time": True,
        "alpha_beta": {"mode": "sampled", "budget": 2000},
        "trajectories": 0,
    },
}

# (kind, lower bound) for scalar leaves; ``None`` allows null
_NUMERIC = {
    ("seed",): (int, 0),
    ("workers",): (int, 1),
    ("algorithm", "epochs"): (int, 0),
    ("algorithm", "tau"): (float, 0.0),
    ("algorithm", "mixing_offset"): (int, 0),
    ("algorithm", "td", "epochs"): (int, 0),
    ("algorithm", "td", "tau"): (float, 0.0),
    ("algorithm", "td", "pilot_episodes"): (int, 0),
    ("evaluation", "nplayer_episodes"): (int, 0),
    ("evaluation", "alpha_beta", "budget"): (int, 1),
    ("evaluation", "trajectories"): (int, 0),
}
_OPTIONAL_POSITIVE = {
    ("evaluation", "every"),
    ("evaluation", "nplayer_every"),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _line(node) -> int | None:
    return node.start_mark.line + 1 if node is not None else None


def _children(node) -> dict:
    if isinstance(node, yaml.MappingNode):
        return {k.value: (k, v) for k, v in node.value}
    return {}


@dataclass
class Experiment:
    raw: dict
    source: Path | None = None
    params_line: int | None = None

    def __getitem__(self, key):
        return self.raw[key]

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _merge(defaults: dict, data: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in data.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _validate_keys(data, node, schema, path, src):
    kids = _children(node)
    for key, value in data.items():
        knode = kids.get(key, (None, None))[0]
        if key not in schema:
            dotted = ".".join(path + (str(key),))
            raise ConfigError(f"unknown key {dotted!r}", _line(knode), src)
        sub = schema[key]
        if isinstance(sub, dict) and key != "params":
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be a mapping",
                                  _line(knode), src)
            _validate_keys(value, kids[key][1], sub, path + (key,), src)


def _node_at(root, path):
    node, key_node = root, None
    for p in path:
        kids = _children(node)
        if p not in kids:
            return key_node
        key_node, node = kids[p]
    return node


def _get(d, path):
    for p in path:
        d = d[p]
    return d


def _check_value(merged, root, path, kind, lo, src, optional=False):
    v = _get(merged, path)
    line = _line(_node_at(root, path))
    name = ".".join(path)
    if v is None and optional:
        return
    ok_type = isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind is int:
        ok_type = isinstance(v, int) and not isinstance(v, bool)
    if not ok_type:
        raise ConfigError(f"{name} must be {'an integer' if kind is int else 'a number'}, "
                          f"got {v!r}", line, src)
    if v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}", line, src)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> Experiment:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    if "version" not in data:
        raise ConfigError("missing 'version' field", 1, source)
    if data["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {data['version']!r}",
                          _line(_node_at(root, ("version",))), source)
    _validate_keys(data, root, DEFAULTS, (), source)
    merged = _merge(DEFAULTS, data)

    for path, (kind, lo) in _NUMERIC.items():
        _check_value(merged, root, path, kind, lo, source)
    for path in _OPTIONAL_POSITIVE:
        _check_value(merged, root, path, int, 1, source, optional=True)
    delta = merged["algorithm"]["td"]["delta"]
    if delta is not None and not (isinstance(delta, (int, float)) and 0 < delta <= 1):
        raise ConfigError(f"algorithm.td.delta must lie in (0, 1], got {delta!r}",
                          _line(_node_at(root, ("algorithm", "td", "delta"))), source)

    algo = merged["algorithm"]["name"]
    if algo not in ALGORITHMS:
        raise ConfigError(f"algorithm.name must be one of {list(ALGORITHMS)}, got {algo!r}",
                          _line(_node_at(root, ("algorithm", "name"))), source)
    mode = merged["evaluation"]["alpha_beta"]["mode"]
    if mode is False:  # YAML 1.1 reads a bare `off` as a boolean
        mode = merged["evaluation"]["alpha_beta"]["mode"] = "off"
    if mode not in ("exact", "sampled", "off"):
        raise ConfigError(f"evaluation.alpha_beta.mode must be exact, sampled or off, got {mode!r}",
                          _line(_node_at(root, ("evaluation", "alpha_beta", "mode"))), source)

    env = merged["environment"]
    env_line = _line(_node_at(root, ("environment",)))
    if (env["name"] is None) == (env["file"] is None):
        raise ConfigError("environment needs exactly one of 'name' or 'file'", env_line, source)
    if env["file"] is not None:
        if env["params"]:
            raise ConfigError("environment.params cannot be combined with a file",
                              _line(_node_at(root, ("environment", "params"))), source)
        p = Path(env["file"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"environment file {env['file']!r} does not exist",
                              _line(_node_at(root, ("environment", "file"))), source)
        env["file"] = str(p)
    else:
        if env["name"] not in CONFIGS:
            raise ConfigError(f"unknown environment {env['name']!r}; choose from {sorted(CONFIGS)}",
                              _line(_node_at(root, ("environment", "name"))), source)
        known = {f.name for f in fields(CONFIGS[env["name"]])}
        kids = _children(_node_at(root, ("environment", "params")))
        for k in env["params"]:
            if k not in known:
                raise ConfigError(f"unknown {env['name']} parameter {k!r}",
                                  _line(kids.get(k, (None,))[0]), source)
    params_node = _node_at(root, ("environment", "params")) or _node_at(root, ("environment",))
    return Experiment(merged, Path(source) if source != "<config>" else None, _line(params_node))


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)
