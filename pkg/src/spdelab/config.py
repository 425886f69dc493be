"""Run configuration: INI sections with a typed schema, environment
overrides, and an exact echo of the effective values.

Sections and keys are validated against the schema; an unknown section or
key is an error naming the offender.  The [problem] section is free-form
beyond the reserved keys: its remaining entries are family parameters and
the family constructor rejects any it does not recognize.

Environment variables SPDELAB_<SECTION>_<KEY> override file values, e.g.
SPDELAB_RUN_MASTER_SEED=7.  Variables that do not name a schema section are
left alone (the kernel switch SPDELAB_FORCE_FALLBACK lives in that space).
"""

import configparser
import os
from dataclasses import dataclass, field, fields

from .model import make_family
from .util import fmt_float


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if str(v).strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if str(v).strip())


@dataclass
class GridSection:
    n_points: int = 128
    c_stab: float = 0.5


@dataclass
class RunSection:
    master_seed: int = 0
    n_samples: int = 2
    # default worker pool size = logical cores; results are worker-invariant
    workers: int = field(default_factory=lambda: max(1, os.cpu_count() or 1))
    store: str = "all"
    chunk_steps: int = 512
    blowup: float = 1e12


@dataclass
class NormsSection:
    alpha: float = 0.5
    p: float = 2.0
    m: int = 2
    pair_budget: int = 200000
    subsample_seed: int = 0


@dataclass
class CascadeSection:
    center_x: float = 3.141592653589793
    rho: float = 0.5
    levels: int = 5
    radius: float = 1.0
    n_points: int = 256
    n_samples: int = 2
    chunk_steps: int = 1024
    refine_max: int = 3
    store_slices: int = 65
    eval_slices: int = 24
    pairs: int = 100
    pair_seed: int = 0
    radii: tuple = (0.5, 0.25, 0.125)


@dataclass
class VerifySection:
    scalars: tuple = (0.1, 2.0, 10.0)
    grids: tuple = (64, 128)
    n_samples: int = 16
    spread_max: float = 10.0


@dataclass
class OutputSection:
    format: str = "csv"


_SECTIONS = {
    "grid": GridSection,
    "run": RunSection,
    "norms": NormsSection,
    "cascade": CascadeSection,
    "verify": VerifySection,
    "output": OutputSection,
}

# reserved [problem] keys handled by make_family's signature
_PROBLEM_RESERVED = ("family", "modes", "horizon", "length", "lam", "K",
                     "alpha", "p", "m")


@dataclass
class RunConfig:
    problem: dict = field(default_factory=lambda: {"family": "constant"})
    grid: GridSection = field(default_factory=GridSection)
    run: RunSection = field(default_factory=RunSection)
    norms: NormsSection = field(default_factory=NormsSection)
    cascade: CascadeSection = field(default_factory=CascadeSection)
    verify: VerifySection = field(default_factory=VerifySection)
    output: OutputSection = field(default_factory=OutputSection)

    def build_spec(self):
        params = dict(self.problem)
        family = params.pop("family", "constant")
        kwargs = {}
        for key, conv in (("modes", int), ("horizon", float), ("length", float),
                          ("lam", float), ("K", float), ("alpha", float),
                          ("p", float), ("m", int)):
            if key in params:
                kwargs[key] = conv(params.pop(key))
        for key, val in params.items():
            try:
                params[key] = float(val)
            except (TypeError, ValueError):
                raise ConfigError("problem parameter %r = %r is not numeric"
                                  % (key, val))
        try:
            return make_family(family, **kwargs, **params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _convert(section, key, raw, target_type):
    try:
        if target_type is tuple:
            # tuple fields carry their element type in the default value
            return _ints(raw) if key == "grids" else _floats(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError("key %r in section [%s] has invalid value %r"
                          % (key, section, raw))


def _apply(cfg, section, key, raw, source):
    if section == "problem":
        cfg.problem[key] = raw
        return
    target = getattr(cfg, section)
    known = {f.name for f in fields(target)}
    if key not in known:
        raise ConfigError("unknown key %r in section [%s] (%s); known keys: %s"
                          % (key, section, source, ", ".join(sorted(known))))
    current = getattr(target, key)
    setattr(target, key, _convert(section, key, raw, type(current)))


def load_config(path=None, env=None, overrides=None):
    """Effective configuration from defaults, an INI file, the environment
    and explicit overrides, in that order of precedence."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        read = parser.read(path)
        if not read:
            raise ConfigError("config file %r not found" % str(path))
        for section in parser.sections():
            if section != "problem" and section not in _SECTIONS:
                raise ConfigError(
                    "unknown section [%s] in %s; known sections: problem, %s"
                    % (section, path, ", ".join(sorted(_SECTIONS))))
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw, str(path))
    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith("SPDELAB_"):
            continue
        rest = name[len("SPDELAB_"):]
        section = rest.split("_", 1)[0].lower()
        if section not in _SECTIONS and section != "problem":
            continue
        if "_" not in rest:
            continue
        key = rest.split("_", 1)[1].lower()
        if section == "problem" and key == "k":
            key = "K"  # the only upper-case problem key
        _apply(cfg, section, key, raw, "environment variable " + name)
    for spec, raw in (overrides or {}).items():
        if "." not in spec:
            raise ConfigError("override %r must look like section.key" % spec)
        section, key = spec.split(".", 1)
        if section not in _SECTIONS and section != "problem":
            raise ConfigError("unknown section [%s] in override %r" % (section, spec))
        _apply(cfg, section, key, raw, "command line")
    return cfg


def _format_value(v):
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, tuple):
        return ",".join(fmt_float(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def echo_config(cfg):
    """INI-format text of the effective configuration, floats at full
    precision so a run can be reproduced from its log."""
    lines = ["[problem]"]
    for key, val in cfg.problem.items():
        lines.append("%s = %s" % (key, _format_value(val)))
    for section in _SECTIONS:
        target = getattr(cfg, section)
        lines.append("")
        lines.append("[%s]" % section)
        for f in fields(target):
            lines.append("%s = %s" % (f.name, _format_value(getattr(target, f.name))))
    return "\n".join(lines) + "\n"
