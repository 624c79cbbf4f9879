"""Strict sectioned key=value configuration files.

Grammar (documented in the README): lines are either blank, comments
starting with '#', section headers '[name]', or 'key = value' pairs.
Unknown sections or keys are rejected before any computation runs; every
value is type-checked by the per-key parser in the schema below.
"""

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError


def _float(s):
    if s == "inf":
        return math.inf
    return float(s)


def _int(s):
    return int(s)


def _str_choice(*choices):
    def parse(s):
        if s not in choices:
            raise ConfigurationError(f"expected one of {choices}, got {s!r}")
        return s
    return parse


def _float_list(s):
    return tuple(_float(x.strip()) for x in s.split(",") if x.strip())


def _knots(s):
    """'r1:v1, r2:v2, ...' -> ((r1, r2, ...), (v1, v2, ...))"""
    rs, vs = [], []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        r, _, v = part.partition(":")
        rs.append(_float(r))
        vs.append(_float(v))
    return tuple(rs), tuple(vs)


def _auto_or_float(s):
    return "auto" if s == "auto" else _float(s)


_PROFILE_KEYS = {
    "form": _str_choice("inverse-power", "table", "zero"),
    "coefficient": _float,
    "exponent": _float,
    "cutoff": _float,
    "rmax": _float,
    "knots": _knots,
}

SCHEMA = {
    "kernel": {**{f"g{i}.{k}": v for i in (1, 2, 3)
                  for k, v in _PROFILE_KEYS.items()},
               "M_bound": _float},
    "quadrature": {"radial_nodes": _int, "angular_order": _int,
                   "tail": _str_choice("analytic", "truncate")},
    "bulk": {"k0": _auto_or_float},
    "grid": {"N": _int},
    "domain": {"geometry": _str_choice("ball", "box"), "center": _float_list,
               "radius": _float, "lo": _float_list, "hi": _float_list,
               "alpha": _float, "c6": _float, "c7": _float},
    "boundary": {"director": _str_choice("constant", "twist", "splay-bend"),
                 "axis": _float_list, "s_star": _auto_or_float},
    "electrostatics": {"A_iso": _float, "A_aniso": _float,
                       "phi0": _str_choice("zero", "linear-x"),
                       "cg_tol": _float, "cg_maxiter": _int},
    "sweep": {"epsilons": _float_list},
    "minimize": {"step0": _float, "backtrack": _float, "grad_tol": _float,
                 "max_iters": _int, "margin": _float, "epsilon": _float,
                 "mode": _str_choice("periodic", "bounded"),
                 "sphere_theta": _int, "sphere_phi": _int},
    "psi": {"samples": _int, "s_lo": _float, "s_hi": _float},
    "output": {"formats": lambda s: tuple(x.strip() for x in s.split(","))},
}


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section, key):
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigurationError(
                f"config is missing required key [{section}] {key}") from None

    def has(self, section):
        return section in self.sections


def parse_config(text):
    """Parse and validate the sectioned key=value format."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in SCHEMA:
                raise ConfigurationError(f"line {lineno}: unknown section [{name}]")
            current = name
            sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"line {lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigurationError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if key not in SCHEMA[current]:
            raise ConfigurationError(
                f"line {lineno}: unknown key {key!r} in section [{current}]")
        try:
            sections[current][key] = SCHEMA[current][key](value)
        except ConfigurationError:
            raise
        except Exception as exc:
            raise ConfigurationError(
                f"line {lineno}: bad value for [{current}] {key}: {exc}") from exc
    return RunConfig(sections)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
