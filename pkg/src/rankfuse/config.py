"""Sectioned key-value run configuration.

The config file is INI-style with ``#`` comments. Unknown sections or keys
are rejected; every key has a documented default. CLI ``--set`` overrides
take precedence over file values, and ``--seed`` overrides the global seed.
"""

import configparser
import hashlib
import json

__all__ = ["RunConfig", "load_config", "DEFAULTS"]


def _floats(s):
    return tuple(float(v) for v in s.split(",")) if s.strip() else ()


def _ints(s):
    return tuple(int(v) for v in s.split(",")) if s.strip() else ()


def _strs(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _matrix(s):
    # rows separated by ";", entries by ","
    rows = [r for r in s.split(";") if r.strip()]
    return tuple(_floats(r) for r in rows)


def _features(s):
    # "age:8,gender:3"
    out = []
    for part in _strs(s):
        name, _, card = part.partition(":")
        if not card:
            raise ValueError(f"feature spec needs name:cardinality, got {part!r}")
        out.append((name, int(card)))
    return tuple(out)


# section -> key -> (parser, default-as-string)
DEFAULTS = {
    "run": {
        "seed": (int, "0"),
    },
    "data": {
        "n_samples": (int, "60000"),
        "objectives": (_strs, "obj1,obj2"),
        "loading_matrix": (_matrix, "1,0;0,1"),
        "objective_bias": (_floats, "0,0"),
        "score_noise_sd": (float, "0.5"),
        "label_noise_sd": (float, "0.0"),
        "features": (_features, ""),
        "feature_noise_sd": (float, "0.5"),
        "test_fraction": (float, "0.2"),
    },
    "model": {
        "n_buckets": (int, "300"),
        "embed_dim": (int, "8"),
        "key_dim": (int, "8"),
        "personalized_dim": (int, "4"),
        "self_attention": (_bool, "true"),
        "cross_attention": (_bool, "true"),
        "personalized": (_bool, "true"),
        "gate": (_bool, "true"),
        "linear_path": (_bool, "true"),
        "linear_path_input": (str, "raw_scores"),
    },
    "train": {
        "loss": (str, "rank_auc"),
        "lr": (float, "1e-4"),
        "batch_size": (int, "10240"),
        "epochs": (int, "500"),
        "mode": (str, "offline"),
        "streaming_inner_epochs": (int, "20"),
        "loss_weights": (_floats, ""),
        "softrank_epsilon": (float, "1.0"),
        "momentum": (float, "0.0"),
        "eval_every": (int, "1"),
    },
    "sweep": {
        "weight_grid": (_matrix, "1,1"),
        "seeds": (_ints, ""),
    },
    "skew": {
        "objective": (str, ""),
        "factors": (_floats, "1,10"),
        "losses": (_strs, "rank_auc,mbce"),
        "seeds": (_ints, ""),
    },
    "bench": {
        "n_values": (_ints, "1024,4096,16384"),
        "losses": (_strs, "rank_auc,mbce,pairwise_logistic,aucm"),
        "repeats": (int, "5"),
    },
    "analyze": {
        "mode": (str, "full"),
        "anchor": (str, ""),
        "n_permutations": (int, "10000"),
    },
}


class RunConfig:
    """Resolved configuration: typed values for every section/key."""

    def __init__(self, values):
        self.values = values

    def get(self, section, key):
        return self.values[section][key]

    def config_hash(self):
        blob = json.dumps(self.values, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path=None, overrides=(), seed=None):
    """Parse a config file (optional) and apply overrides.

    ``overrides`` are "section.key=value" strings; ``seed`` replaces
    [run] seed when given. Unknown sections/keys raise ValueError.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",))
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    raw = {section: dict(parser[section]) for section in parser.sections()}
    for item in overrides:
        key_path, _, value = item.partition("=")
        section, _, key = key_path.partition(".")
        if not value or not key:
            raise ValueError(f"override must be section.key=value, got {item!r}")
        raw.setdefault(section, {})[key] = value

    for section in raw:
        if section not in DEFAULTS:
            raise ValueError(f"unknown config section [{section}]")
        for key in raw[section]:
            if key not in DEFAULTS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")

    values = {}
    for section, schema in DEFAULTS.items():
        values[section] = {}
        for key, (convert, default) in schema.items():
            text = raw.get(section, {}).get(key, default)
            try:
                values[section][key] = convert(text)
            except ValueError as exc:
                raise ValueError(f"bad value for {section}.{key}: {exc}") from exc
    if seed is not None:
        values["run"]["seed"] = int(seed)
    return RunConfig(values)
