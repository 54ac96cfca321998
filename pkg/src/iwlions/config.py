"""Experiment configuration: schema, TOML parsing and validation.

A config file looks like::

    schema_version = 1
    name = "full-flow-gaussian"
    theorem = "IWL-full-measure"
    T = 1.0
    d = 1
    seed = 20240611
    R = 64

    [ladder]
    M = [256, 1024, 4096]
    N = [256, 1024, 4096]
    design = "cross"

    [field]
    kind = "static"
    F = { kind = "linear", f = { coeffs = [0.0, 0.0, 1.0] } }

    [cloud]
    b = { kind = "constant", offset = 0.5 }
    sigma = { kind = "constant", offset = 1.0 }
    y0 = { kind = "gaussian", mean = 0.0, std = 1.0 }

    [tolerances]
    rms_max = 0.05

Coefficient tables follow :class:`iwlions.sde.CoefficientSpec`; field tables
follow :func:`iwlions.fields.field_from_dict`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

from .chain_rule import THEOREMS
from .errors import ConfigError, InvalidArgument
from .fields import FIELD_KINDS, field_from_dict
from .sde import COEFFICIENT_KINDS, CoefficientSpec, InitialSampler

__all__ = ["ExperimentConfig", "load_config", "parse_config", "SCHEMA_VERSION", "TOLERANCE_KEYS"]

SCHEMA_VERSION = 1
DESIGNS = ("cross", "full")
TOP_KEYS = {"schema_version", "name", "theorem", "T", "d", "seed", "R", "ladder", "field", "process",
            "cloud", "tolerances", "fault"}
PROCESS_KEYS = {"beta", "gamma", "gamma0", "gamma1", "x0"}
CLOUD_KEYS = {"b", "sigma", "sigma0", "sigma1", "y0"}
TOLERANCE_KEYS = {
    "rms_max", "rms_window", "mean_within_se", "term_sum", "term_exact", "ablation", "ablation_shift",
    "slope_M", "slope_N", "monotone_N", "max_abs_residual", "chaos_corrected_slope_M",
}
CONDITIONAL = ("IL-conditional", "IWL-conditional-measure", "IWL-conditional-joint")
NEEDS_X = ("IW-classic", "IW-reduced", "IL-full", "IWL-full-joint", "IL-conditional", "IWL-conditional-joint")
NEEDS_CLOUD = tuple(t for t in THEOREMS if not t.startswith("IW-"))


def _coef(spec, key):
    if isinstance(spec, (int, float)):
        return CoefficientSpec.constant(spec)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("coefficient needs a 'kind' table", key=key)
    kind = spec["kind"]
    if kind not in COEFFICIENT_KINDS:
        raise ConfigError(f"unknown coefficient kind {kind!r}", key=f"{key}.kind")
    unknown = set(spec) - {"kind", "offset", "coeffs", "gain", "source"}
    if unknown:
        raise ConfigError(f"unknown coefficient keys {sorted(unknown)}", key=key)
    try:
        return CoefficientSpec(kind, offset=spec.get("offset", 0.0), coeffs=tuple(spec.get("coeffs", ())),
                               gain=spec.get("gain", 0.0), source=spec.get("source", "own"))
    except (InvalidArgument, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), key=key) from None


def _sampler(spec, key):
    if spec is None:
        return InitialSampler()
    if isinstance(spec, (int, float)):
        return InitialSampler("point", value=spec)
    if not isinstance(spec, dict):
        raise ConfigError("initial law must be a table", key=key)
    unknown = set(spec) - {"kind", "value", "mean", "std", "low", "high"}
    if unknown:
        raise ConfigError(f"unknown initial-law keys {sorted(unknown)}", key=key)
    try:
        return InitialSampler(**spec)
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(str(exc), key=key) from None


def _ladder(values, key):
    if isinstance(values, int):
        values = [values]
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError("ladder must be a non-empty list of integers", key=key)
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in values):
        raise ConfigError("ladder entries must be positive integers", key=key)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("ladder must be strictly increasing", key=key)
    return tuple(values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; dict-valued fields hold canonical specs."""

    theorem: str
    field: dict
    M: tuple
    N: tuple = (1,)
    n: tuple = ()
    R: int = 1
    seed: int = 0
    T: float = 1.0
    d: int = 1
    design: str = "cross"
    name: str = "experiment"
    process: dict = field(default_factory=dict)
    cloud: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    fault: str = ""
    schema_version: int = SCHEMA_VERSION

    # built objects -----------------------------------------------------
    def build_field(self):
        return field_from_dict(self.field)

    def coefficient(self, group, key, default=0.0):
        table = self.process if group == "process" else self.cloud
        return _coef(table.get(key, default), f"{group}.{key}")

    def sampler(self, group, key):
        table = self.process if group == "process" else self.cloud
        return _sampler(table.get(key), f"{group}.{key}")

    @property
    def conditional(self) -> bool:
        return self.theorem in CONDITIONAL

    @property
    def needs_x(self) -> bool:
        return self.theorem in NEEDS_X

    @property
    def needs_cloud(self) -> bool:
        return self.theorem in NEEDS_CLOUD

    def ladder_points(self):
        """``(M, N)`` pairs to run: the full grid, or the two axes through the largest point."""
        if self.design == "full":
            return [(m, n) for m in self.M for n in self.N]
        pts = [(m, self.N[-1]) for m in self.M]
        pts += [(self.M[-1], n) for n in self.N[:-1]]
        return sorted(set(pts))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        data = self.to_dict()
        for k, v in kw.items():
            if k in ("M", "N", "n", "design"):
                data["ladder"][k] = list(v) if isinstance(v, (tuple, list)) else v
            else:
                data[k] = v
        return parse_config(data)

    def to_dict(self) -> dict:
        out = {
            "schema_version": self.schema_version,
            "name": self.name,
            "theorem": self.theorem,
            "T": self.T,
            "d": self.d,
            "seed": self.seed,
            "R": self.R,
            "ladder": {"M": list(self.M), "N": list(self.N), "n": list(self.n), "design": self.design},
            "field": self.field,
            "process": self.process,
            "cloud": self.cloud,
            "tolerances": self.tolerances,
        }
        if self.fault:
            out["fault"] = self.fault
        return out


def _canon(obj):
    """Lists in place of tuples so that parsed and echoed configs compare equal."""
    if isinstance(obj, dict):
        return {k: _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a parsed document and build an :class:`ExperimentConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}", key=sorted(unknown)[0])
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})",
                          key="schema_version")
    theorem = data.get("theorem")
    if theorem not in THEOREMS:
        raise ConfigError(f"unknown theorem {theorem!r}; expected one of {list(THEOREMS)}", key="theorem")

    T = data.get("T", 1.0)
    if not isinstance(T, (int, float)) or isinstance(T, bool) or not T > 0:
        raise ConfigError("T must be a positive number", key="T")
    d = data.get("d", 1)
    if not isinstance(d, int) or d < 1:
        raise ConfigError("d must be a positive integer", key="d")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
    R = data.get("R", 1)
    if not isinstance(R, int) or isinstance(R, bool) or R < 1:
        raise ConfigError("R must be a positive integer", key="R")

    ladder = data.get("ladder", {})
    if not isinstance(ladder, dict):
        raise ConfigError("ladder must be a table", key="ladder")
    unknown = set(ladder) - {"M", "N", "n", "design"}
    if unknown:
        raise ConfigError(f"unknown ladder keys {sorted(unknown)}", key=f"ladder.{sorted(unknown)[0]}")
    if "M" not in ladder:
        raise ConfigError("ladder.M is required", key="ladder.M")
    M = _ladder(ladder["M"], "ladder.M")
    N = _ladder(ladder.get("N", [1]), "ladder.N")
    n = _ladder(ladder["n"], "ladder.n") if ladder.get("n") else ()
    design = ladder.get("design", "cross")
    if design not in DESIGNS:
        raise ConfigError(f"unknown ladder design {design!r}", key="ladder.design")

    fspec = data.get("field")
    if not isinstance(fspec, dict):
        raise ConfigError("a [field] table is required", key="field")
    if fspec.get("kind") not in FIELD_KINDS:
        raise ConfigError(f"unknown field kind {fspec.get('kind')!r}; expected one of {list(FIELD_KINDS)}",
                          key="field.kind")
    try:
        fld = field_from_dict(fspec)
    except (InvalidArgument, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="field") from None

    process = data.get("process", {})
    cloud = data.get("cloud", {})
    for group, table, allowed in (("process", process, PROCESS_KEYS), ("cloud", cloud, CLOUD_KEYS)):
        if not isinstance(table, dict):
            raise ConfigError(f"{group} must be a table", key=group)
        unknown = set(table) - allowed
        if unknown:
            raise ConfigError(f"unknown {group} keys {sorted(unknown)}", key=f"{group}.{sorted(unknown)[0]}")
    canon_process = {}
    for key, val in process.items():
        canon_process[key] = (_sampler(val, f"process.{key}").to_dict() if key == "x0"
                              else _coef(val, f"process.{key}").to_dict())
    canon_cloud = {}
    for key, val in cloud.items():
        canon_cloud[key] = (_sampler(val, f"cloud.{key}").to_dict() if key == "y0"
                            else _coef(val, f"cloud.{key}").to_dict())

    tol = data.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("tolerances must be a table", key="tolerances")
    unknown = set(tol) - TOLERANCE_KEYS
    if unknown:
        raise ConfigError(f"unknown tolerance keys {sorted(unknown)}", key=f"tolerances.{sorted(unknown)[0]}")

    conditional = theorem in CONDITIONAL
    if conditional and theorem != "IL-conditional" and fld.mode != "two":
        raise ConfigError(f"{theorem} needs a two-noise field (mode = \"two\")", key="field.mode")
    if not conditional and fld.mode == "two":
        raise ConfigError(f"{theorem} needs a single-noise field", key="field.mode")
    if theorem in NEEDS_CLOUD and conditional and "sigma" in cloud:
        raise ConfigError("conditional clouds use sigma0/sigma1, not sigma", key="cloud.sigma")
    if theorem in NEEDS_CLOUD and not conditional and ("sigma0" in cloud or "sigma1" in cloud):
        raise ConfigError("full-flow clouds use sigma, not sigma0/sigma1", key="cloud.sigma0")
    if conditional and "gamma" in process:
        raise ConfigError("conditional settings use gamma0/gamma1, not gamma", key="process.gamma")
    if theorem == "IWL-conditional-measure" and "sigma0" in cloud and fld.mode != "two":
        raise ConfigError("two-noise field required", key="field.mode")

    fault = data.get("fault", "")
    if fault and not re.fullmatch(r"drop-term:[a-z0-9_]+", fault):
        raise ConfigError("fault must look like 'drop-term:<term>'", key="fault")

    return ExperimentConfig(
        theorem=theorem, field=_canon(fld.to_dict()), M=M, N=N, n=n, R=R, seed=seed, T=float(T), d=d,
        design=design, name=str(data.get("name", "experiment")), process=_canon(canon_process),
        cloud=_canon(canon_cloud), tolerances=_canon(tol), fault=fault, schema_version=version,
    )


def _line_of(text: str, key: str):
    leaf = key.split(".")[-1]
    pat = re.compile(rf"^\s*{re.escape(leaf)}\s*=|^\s*\[{re.escape(key)}\]", re.M)
    m = pat.search(text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def load_config(path) -> ExperimentConfig:
    """Read a TOML config; every failure surfaces as :class:`ConfigError`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        data = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        m = re.search(r"line (\d+)", str(exc))
        if line is None and m:
            line = int(m.group(1))
        elif line is None and "end of document" in str(exc):
            line = max(1, text.count("\n") + (not text.endswith("\n")))
        raise ConfigError(f"TOML syntax error: {exc}", line=line) from None
    try:
        return parse_config(data)
    except ConfigError as exc:
        if exc.key and exc.line is None:
            raise ConfigError(exc.message, key=exc.key, line=_line_of(text, exc.key)) from None
        raise
