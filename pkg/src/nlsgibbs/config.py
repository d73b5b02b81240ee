"""Run configuration: sectioned key/value files (or JSON), validation, hashing and manifests."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .harness import in_q_range

# desk-scale cutoffs for anything the run orchestrates (expansion and sampling included)
RUN_CUTOFF_CAPS = {1: 16, 2: 8, 3: 4}
POTENTIAL_VARIANTS = ("constant", "powerFourier", "selfConvolution", "endpointSquare", "powerSquare")
SEED_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class TorusBlock:
    d: int = 2
    kappa: float = 1.0
    K: int = 4


@dataclass(frozen=True)
class PotentialBlock:
    variant: str = "powerFourier"
    c: float = 0.5
    q: float = 1.5
    p: float = 2.0
    eps: float = 0.5
    exponent: float = 1.0
    beta: float = 0.5


@dataclass(frozen=True)
class ExpansionBlock:
    m_max: int = 1
    r: int = 1
    eta: float = 0.125
    quad_order: int = 8
    taus: tuple = (1.0, 10.0, 100.0, 1000.0, 10000.0)


@dataclass(frozen=True)
class McBlock:
    n: int = 20000
    z: tuple = (0.1,)


@dataclass(frozen=True)
class BoundsBlock:
    q: float = 6.0
    t: float = 0.0
    K: int = 2


@dataclass(frozen=True)
class RunConfig:
    torus: TorusBlock = field(default_factory=TorusBlock)
    potential: PotentialBlock = field(default_factory=PotentialBlock)
    expansion: ExpansionBlock = field(default_factory=ExpansionBlock)
    mc: McBlock = field(default_factory=McBlock)
    bounds: BoundsBlock = field(default_factory=BoundsBlock)
    seed: int = 20240101
    out: str = "out"

    # ------------------------------------------------------------ validation

    def validate(self) -> "RunConfig":
        t, pot, ex, mc, b = self.torus, self.potential, self.expansion, self.mc, self.bounds
        if t.d not in (1, 2, 3):
            raise ConfigError(f"torus.d: must be 1, 2 or 3, got {t.d}")
        if not t.kappa > 0:
            raise ConfigError(f"torus.kappa: must be positive, got {t.kappa}")
        if not 0 <= t.K <= RUN_CUTOFF_CAPS[t.d]:
            raise ConfigError(f"torus.K: must lie in 0..{RUN_CUTOFF_CAPS[t.d]} for d = {t.d}, got {t.K}")
        if (ex.eta == 0.0) != (t.d == 1):
            raise ConfigError(f"expansion.eta: must be 0 exactly when d = 1 (d = {t.d}, eta = {ex.eta})")
        if not 0.0 <= ex.eta < 0.5:
            raise ConfigError(f"expansion.eta: must lie in [0, 1/2), got {ex.eta}")
        if pot.variant not in POTENTIAL_VARIANTS:
            raise ConfigError(f"potential.variant: unknown {pot.variant!r}; choose from {', '.join(POTENTIAL_VARIANTS)}")
        if pot.variant == "endpointSquare" and t.d != 2:
            raise ConfigError("potential.variant: endpointSquare needs d = 2")
        if pot.variant == "powerFourier" and t.d == 1:
            raise ConfigError("potential.variant: powerFourier needs d = 2 or 3")
        if not 0 <= ex.m_max <= 3:
            raise ConfigError(f"expansion.m_max: must lie in 0..3, got {ex.m_max}")
        if ex.r not in (0, 1, 2):
            raise ConfigError(f"expansion.r: must be 0, 1 or 2, got {ex.r}")
        if ex.quad_order < 2:
            raise ConfigError(f"expansion.quad_order: must be at least 2, got {ex.quad_order}")
        if not ex.taus or any(not tau >= 1 for tau in ex.taus):
            raise ConfigError(f"expansion.taus: need a nonempty list of temperatures >= 1, got {list(ex.taus)}")
        if mc.n < 1000:
            raise ConfigError(f"mc.n: need at least 1000 samples, got {mc.n}")
        if not mc.z or any(not 0 <= z <= 2 for z in mc.z):
            raise ConfigError(f"mc.z: couplings must lie in [0, 2], got {list(mc.z)}")
        if not in_q_range(t.d, b.q):
            raise ConfigError(f"bounds.q: {b.q} is not an admissible Green-function exponent for d = {t.d}")
        if not 1 <= b.K <= RUN_CUTOFF_CAPS[t.d]:
            raise ConfigError(f"bounds.K: must lie in 1..{RUN_CUTOFF_CAPS[t.d]} for d = {t.d}, got {b.K}")
        if not -1 < b.t < 1:
            raise ConfigError(f"bounds.t: must lie in (-1, 1), got {b.t}")
        if not 0 <= self.seed <= SEED_MAX:
            raise ConfigError(f"seed: must be a 64-bit unsigned integer, got {self.seed}")
        return self

    # ------------------------------------------------------------ serialisation

    def semantic_dict(self) -> dict:
        """Every field that affects results; the output directory is excluded."""
        data = asdict(self)
        data.pop("out")
        return _jsonable(data)

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    def to_ini(self) -> str:
        cp = _parser()
        for block in ("torus", "potential", "expansion", "mc", "bounds"):
            cp[block] = {k: _fmt(v) for k, v in asdict(getattr(self, block)).items()}
        cp["run"] = {"seed": str(self.seed), "out": self.out}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply ``{"section.key": "value"}`` (or ``seed``/``out``) string overrides."""
        data = asdict(self)
        if "torus.d" in overrides and "expansion.eta" not in overrides:
            del data["expansion"]["eta"]
        for key, raw in overrides.items():
            if key in ("seed", "out", "run.seed", "run.out"):
                data[key.split(".")[-1]] = raw
                continue
            if "." not in key:
                raise ConfigError(f"{key}: overrides take the form section.key=value")
            section, name = key.split(".", 1)
            if section not in data or not isinstance(data[section], dict) or name not in data[section]:
                raise ConfigError(f"{key}: no such configuration field")
            data[section][name] = raw
        return from_mapping(data)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep field names case-sensitive (K vs k)
    return cp


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


_BLOCKS = {
    "torus": TorusBlock,
    "potential": PotentialBlock,
    "expansion": ExpansionBlock,
    "mc": McBlock,
    "bounds": BoundsBlock,
}


def _coerce(section: str, name: str, target_type, raw):
    where = f"{section}.{name}" if section else name
    try:
        if target_type in ("tuple", tuple):
            items = raw if isinstance(raw, (list, tuple)) else [x for x in str(raw).replace(",", " ").split() if x]
            return tuple(float(x) for x in items)
        if target_type in ("int", int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if target_type in ("float", float):
            val = float(raw)
            if math.isnan(val):
                raise ValueError
            return val
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(target_type, '__name__', target_type)}") from None


def _build_block(section: str, cls, values: dict):
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}: unknown field")
    kwargs = {k: _coerce(section, k, known[k], v) for k, v in values.items()}
    return cls(**kwargs)


def from_mapping(data: dict) -> RunConfig:
    """Build and validate a config from nested dicts (JSON layout); missing fields take defaults."""
    unknown = set(data) - set(_BLOCKS) - {"seed", "out", "run"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    kwargs = {}
    for section, cls in _BLOCKS.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"{section}: expected a table of fields")
            kwargs[section] = _build_block(section, cls, data[section])
    run = dict(data.get("run", {}))
    for key in ("seed", "out"):
        if key in data:
            run[key] = data[key]
    if "seed" in run:
        kwargs["seed"] = _coerce("", "seed", int, run["seed"])
    if "out" in run:
        kwargs["out"] = str(run["out"])
    cfg = RunConfig(**kwargs)
    if "eta" not in data.get("expansion", {}):
        # eta follows the dimension unless it was set explicitly
        cfg = replace(cfg, expansion=replace(cfg.expansion, eta=0.0 if cfg.torus.d == 1 else 0.125))
    return cfg.validate()


def parse_ini(text: str) -> RunConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    return from_mapping({s: dict(cp[s]) for s in cp.sections()})


def parse_json(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    return from_mapping(data)


def load_config(path) -> RunConfig:
    """Read a config file; JSON is recognised by a leading brace."""
    text = Path(path).read_text()
    return parse_json(text) if text.lstrip().startswith("{") else parse_ini(text)


def default_config() -> RunConfig:
    return RunConfig().validate()


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    started: float
    subcommand: str
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)
    status: str = "running"

    @classmethod
    def start(cls, cfg: RunConfig, subcommand: str) -> "RunManifest":
        return cls(cfg.config_hash(), cfg.seed, __version__, time.time(), subcommand)

    def add(self, name: str, path) -> None:
        self.artifacts.setdefault(self.subcommand, []).append({"name": name, "path": str(path)})

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path

    def finish(self, out_dir, status: str) -> Path:
        self.wall_clock = time.time() - self.started
        self.status = status
        return self.write(out_dir)
