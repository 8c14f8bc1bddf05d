"""Run configuration: JSON schema, defaults and validation."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

TOP_KEYS = ("scenario", "params", "dimension", "offspring", "sim", "deltas", "directions",
            "x0", "out")
SIM_KEYS = ("dt", "eps", "horizon", "replicas", "population_cap", "record_every", "burn_in",
            "seed", "engine")

# scenario -> (dimension, default params, has singular part)
SCENARIOS = {
    "dirac1d": (1, {"c": 1.0, "a": 0.0}, True),
    "two_diracs": (1, {"c1": 1.0, "c2": 1.0, "a": 1.0}, True),
    "lattice": (1, {"p": 2.0, "n_max": 30}, True),
    "sphere_d3": (3, {"c": 2.0, "R": 1.0}, True),
    "sphere_d2": (2, {"c": 1.0, "R": 1.0}, True),
    "ball": (3, {"c": 2.0, "R": 1.0}, False),
    "powerlaw": (3, {"c": 1.0, "R": 1.0, "p": 1.0}, False),
    "expdecay": (3, {"c": 1.0, "p": 2.0}, False),
    "mollified_dirac": (1, {"c": 1.0, "width": 0.05}, False),
}

# scenarios whose dimension is a free parameter (d = 2 solvers exist only for balls)
FREE_DIMENSION = {"ball": (1, 2, 3), "powerlaw": (1, 3), "expdecay": (1, 3),
                  "mollified_dirac": (1,)}

SIM_DEFAULTS = {"dt": 1e-3, "eps": 5e-3, "horizon": 14.0, "replicas": 200,
                "population_cap": 200_000, "record_every": 0.5, "burn_in": 2.0, "seed": 0,
                "engine": "auto"}
# singular scenarios run on the discretised engine need dt <= eps^2 / 10
SINGULAR_DISCRETIZED = {"dt": 2.5e-4, "eps": 0.05}


class ConfigError(ValueError):
    """Schema or invariant violation; the message starts with the field path."""


@dataclass
class SimBlock:
    dt: float
    eps: float
    horizon: float
    replicas: int
    population_cap: int
    record_every: float
    burn_in: float
    seed: int
    engine: str


@dataclass
class SimConfig:
    scenario: str
    params: dict
    dimension: int
    offspring: dict
    sim: SimBlock
    deltas: list
    directions: list
    x0: list
    out: str = "out"
    singular: bool = field(default=False, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("singular")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _err(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _unknown(d: dict, allowed, path):
    for k in d:
        if k not in allowed:
            _err(f"{path}{k}", "unknown key")


def _number(v, path, positive=False, integer=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _err(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        _err(path, "expected an integer")
    if not math.isfinite(v):
        _err(path, "must be finite")
    if positive and not v > 0:
        _err(path, "must be positive")
    if nonneg and v < 0:
        _err(path, "must be nonnegative")
    return int(v) if integer else float(v)


def from_dict(raw: dict) -> SimConfig:
    """Validate a raw mapping and fill defaults."""
    if not isinstance(raw, dict):
        _err("$", "config must be a JSON object")
    _unknown(raw, TOP_KEYS, "$.")
    if "scenario" not in raw:
        _err("$.scenario", "missing")
    scen = raw["scenario"]
    if scen not in SCENARIOS:
        _err("$.scenario", f"unknown scenario {scen!r}; choose from {sorted(SCENARIOS)}")
    dim0, pdef, singular = SCENARIOS[scen]
    params = dict(pdef)
    praw = raw.get("params", {})
    if not isinstance(praw, dict):
        _err("$.params", "expected an object")
    _unknown(praw, pdef, "$.params.")
    for k, v in praw.items():
        params[k] = _number(v, f"$.params.{k}", integer=(k == "n_max"))
    dim = _number(raw.get("dimension", dim0), "$.dimension", integer=True)
    if scen in FREE_DIMENSION:
        if dim not in FREE_DIMENSION[scen]:
            _err("$.dimension", f"scenario {scen} supports d in {FREE_DIMENSION[scen]}")
    elif dim != dim0:
        _err("$.dimension", f"scenario {scen} lives in d={dim0}")

    off = raw.get("offspring", {"2": 1.0})
    if not isinstance(off, dict) or not off:
        _err("$.offspring", "expected a nonempty object")
    if "geometric" in off:
        if len(off) != 1:
            _err("$.offspring", "geometric law takes a single parameter")
        _number(off["geometric"], "$.offspring.geometric")
        off = {"geometric": float(off["geometric"])}
    else:
        clean = {}
        for k, v in off.items():
            try:
                n = int(k)
            except ValueError:
                _err(f"$.offspring.{k}", "keys must be offspring numbers or 'geometric'")
            if n < 1:
                _err(f"$.offspring.{k}", "offspring numbers must be >= 1")
            clean[str(n)] = _number(v, f"$.offspring.{k}", nonneg=True)
        if abs(sum(clean.values()) - 1.0) > 1e-12:
            _err("$.offspring", "probabilities must sum to 1")
        off = clean

    sraw = raw.get("sim", {})
    if not isinstance(sraw, dict):
        _err("$.sim", "expected an object")
    _unknown(sraw, SIM_KEYS, "$.sim.")
    engine = sraw.get("engine", SIM_DEFAULTS["engine"])
    if engine not in ("auto", "exact", "discretized"):
        _err("$.sim.engine", "must be auto, exact or discretized")
    exact_ok = scen == "dirac1d"
    if engine == "exact" and not exact_ok:
        _err("$.sim.engine", "the exact engine only covers dirac1d")
    discretized = engine == "discretized" or (engine == "auto" and not exact_ok)
    sdef = dict(SIM_DEFAULTS)
    if singular and discretized:
        sdef.update(SINGULAR_DISCRETIZED)
    s = {}
    for k in SIM_KEYS:
        v = sraw.get(k, sdef[k])
        if k == "engine":
            s[k] = v
        elif k in ("replicas", "population_cap", "seed"):
            s[k] = _number(v, f"$.sim.{k}", integer=True, positive=k != "seed", nonneg=True)
        elif k == "burn_in":
            s[k] = _number(v, f"$.sim.{k}", nonneg=True)
        else:
            s[k] = _number(v, f"$.sim.{k}", positive=True)
    sim = SimBlock(**s)
    if singular and discretized and sim.dt > sim.eps ** 2 / 10 * (1 + 1e-12):
        _err("$.sim.dt", f"dt={sim.dt:g} must be <= eps^2/10 = {sim.eps ** 2 / 10:g} for "
                         "singular measures on the discretised engine")
    k = round(sim.horizon / sim.record_every)
    if abs(k * sim.record_every - sim.horizon) > 1e-9 * sim.horizon:
        _err("$.sim.record_every", "horizon must be a multiple of record_every")

    deltas = raw.get("deltas", [0.25])
    if not isinstance(deltas, list):
        _err("$.deltas", "expected a list")
    deltas = [_number(v, f"$.deltas[{i}]", positive=True) for i, v in enumerate(deltas)]

    default_dirs = [[1.0] + [0.0] * (dim - 1)]
    dirs = raw.get("directions", default_dirs)
    if not isinstance(dirs, list):
        _err("$.directions", "expected a list of vectors")
    clean_dirs = []
    for i, r in enumerate(dirs):
        if not isinstance(r, list) or len(r) != dim:
            _err(f"$.directions[{i}]", f"expected a {dim}-vector")
        r = [_number(v, f"$.directions[{i}]") for v in r]
        if abs(math.sqrt(sum(v * v for v in r)) - 1.0) > 1e-12:
            _err(f"$.directions[{i}]", "direction must be a unit vector")
        clean_dirs.append(r)

    x0 = raw.get("x0", [0.0] * dim)
    if not isinstance(x0, list) or len(x0) != dim:
        _err("$.x0", f"expected a {dim}-vector")
    x0 = [_number(v, f"$.x0[{i}]") for i, v in enumerate(x0)]
    out = raw.get("out", "out")
    if not isinstance(out, str):
        _err("$.out", "expected a path string")
    return SimConfig(scen, params, dim, off, sim, deltas, clean_dirs, x0, out, singular)


def load_config(path) -> SimConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{p}: no such file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    return from_dict(raw)


def emit_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(cfg.dumps() + "\n")


def with_overrides(cfg: SimConfig, seed=None, replicas=None, out=None) -> SimConfig:
    new = copy.deepcopy(cfg)
    if seed is not None:
        new.sim.seed = int(seed)
    if replicas is not None:
        if replicas < 1:
            raise ConfigError("--replicas: must be positive")
        new.sim.replicas = int(replicas)
    if out is not None:
        new.out = str(out)
    return new
