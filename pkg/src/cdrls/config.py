"""Experiment configuration: a flat ``key = value`` file with one section per data source.

Top-level keys describe the run; ``[synthetic]`` and ``[csv]`` hold source
options. ``#`` and ``;`` start comments. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .rng_stats import calibrate_tau

ALGORITHMS = ("drls_original", "drls", "cdrls1", "cdrls2", "cdrls3", "acrls", "diffusion_lms")
CENSORING = frozenset({"cdrls1", "cdrls2", "cdrls3", "acrls"})
SOURCES = ("synthetic", "tracking", "csv")

_TOP = "run"


@dataclass(frozen=True)
class RunConfig:
    algorithms: tuple[str, ...]
    J: int = 15
    topology: str = "geometric"
    range: float = 0.3
    topology_seed: int = 1
    edges_path: str | None = None
    connect: bool = True
    p: int = 4
    lam: float = 1.0
    rho: float = 0.01
    gamma: float = 30.0
    acrls_gamma: float | None = None
    pi_star: float | None = None
    tau: float | None = None
    variance: str = "online"
    d_max: int = 20
    T: int = 2000
    runs: int = 20
    seed: int = 0
    source: str = "synthetic"
    lms_step: float = 1.5
    diffusion_weights: str = "uniform"
    # [synthetic]
    q: float = 0.5
    overlap: bool = False
    # [csv]
    csv_path: str | None = None
    x_col: int = 0
    feature_cols: tuple[int, ...] = ()
    max_records: int | None = None

    def __post_init__(self):
        validate(self)

    @property
    def algorithm(self) -> str:
        return self.algorithms[0]

    def with_algorithm(self, kind: str) -> "RunConfig":
        """Single-algorithm copy; the threshold is dropped for algorithms that do not censor."""
        if kind in CENSORING:
            return self.replace(algorithms=(kind,))
        return self.replace(algorithms=(kind,), pi_star=None, tau=None)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def resolved_tau(self) -> float:
        if self.tau is not None:
            return self.tau
        if self.pi_star is not None:
            return calibrate_tau(self.pi_star)
        return 0.0

    def gamma_for(self, kind: str) -> float:
        if kind == "acrls" and self.acrls_gamma is not None:
            return self.acrls_gamma
        return self.gamma

    def to_text(self) -> str:
        """Canonical text form; :func:`loads` of it yields an equal config."""
        lines = []
        csv_lines = []
        syn_lines = []
        for key, fld in _KEYS.items():
            value = getattr(self, fld)
            if value is None or (fld == "edges_path" and self.topology != "edges"):
                continue
            if fld == "feature_cols" and not value:
                continue
            if fld in ("q", "overlap"):
                syn_lines.append(f"{key} = {_fmt(value)}")
            elif fld in _CSV_FIELDS:
                csv_lines.append(f"{key} = {_fmt(value)}")
            else:
                lines.append(f"{key} = {_fmt(value)}")
        out = lines + ["", "[synthetic]"] + syn_lines
        if self.source == "csv":
            out += ["", "[csv]"] + csv_lines
        return "\n".join(out) + "\n"


_CSV_FIELDS = {"csv_path", "x_col", "feature_cols", "max_records"}

# file key -> dataclass field
_KEYS = {
    "algorithm": "algorithms",
    "J": "J",
    "topology": "topology",
    "range": "range",
    "topology_seed": "topology_seed",
    "edges_path": "edges_path",
    "connect": "connect",
    "p": "p",
    "lambda": "lam",
    "rho": "rho",
    "gamma": "gamma",
    "acrls_gamma": "acrls_gamma",
    "pi_star": "pi_star",
    "tau": "tau",
    "variance": "variance",
    "d_max": "d_max",
    "T": "T",
    "runs": "runs",
    "seed": "seed",
    "source": "source",
    "lms_step": "lms_step",
    "diffusion_weights": "diffusion_weights",
    "q": "q",
    "overlap": "overlap",
    "path": "csv_path",
    "x_col": "x_col",
    "feature_cols": "feature_cols",
    "max_records": "max_records",
}
_SECTION_KEYS = {
    _TOP: {k for k, f in _KEYS.items() if f not in _CSV_FIELDS and f not in ("q", "overlap")},
    "synthetic": {"q", "overlap"},
    "csv": {"path", "x_col", "feature_cols", "max_records"},
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(key, raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _convert(key: str, fld: str, raw: str):
    typ = {f.name: f.type for f in dataclasses.fields(RunConfig)}[fld]
    raw = raw.strip()
    try:
        if fld == "algorithms":
            return tuple(a.strip().lower() for a in raw.split(",") if a.strip())
        if fld == "feature_cols":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if "bool" in typ:
            return _parse_bool(key, raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def loads(text: str, base_dir=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_TOP}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                where = "" if section == _TOP else f" in [{section}]"
                home = [s for s, keys in _SECTION_KEYS.items() if key in keys]
                hint = f" (belongs {'at top level' if home[0] == _TOP else f'in [{home[0]}]'})" if home else ""
                raise ConfigError(f"unknown key {key!r}{where}{hint}")
            values[_KEYS[key]] = _convert(key, _KEYS[key], raw)
    if "algorithms" not in values:
        raise ConfigError("algorithm is required")
    for fld in ("csv_path", "edges_path"):
        if values.get(fld) and base_dir is not None and not Path(values[fld]).is_absolute():
            values[fld] = str((Path(base_dir) / values[fld]).resolve())
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, base_dir=path.parent)


def _require(cond, field_name, value, constraint):
    if not cond:
        raise ConfigError(f"{field_name} must {constraint} (got {value!r})")


def validate(cfg: RunConfig) -> None:
    _require(len(cfg.algorithms) >= 1, "algorithm", cfg.algorithms, "name at least one algorithm")
    for kind in cfg.algorithms:
        _require(kind in ALGORITHMS, "algorithm", kind, f"be one of {', '.join(ALGORITHMS)}")
    _require(cfg.J >= 1, "J", cfg.J, "be >= 1")
    _require(cfg.topology in ("geometric", "edges"), "topology", cfg.topology, "be 'geometric' or 'edges'")
    if cfg.topology == "geometric":
        _require(0 < cfg.range <= 2 ** 0.5, "range", cfg.range, "lie in (0, sqrt(2)]")
    else:
        _require(bool(cfg.edges_path), "edges_path", cfg.edges_path, "be set when topology = edges")
    _require(cfg.p >= 1, "p", cfg.p, "be >= 1")
    _require(0 < cfg.lam <= 1, "lambda", cfg.lam, "lie in (0,1]")
    _require(cfg.rho >= 0, "rho", cfg.rho, "be >= 0")
    _require(cfg.gamma > 0, "gamma", cfg.gamma, "be > 0")
    if cfg.acrls_gamma is not None:
        _require(cfg.acrls_gamma > 0, "acrls_gamma", cfg.acrls_gamma, "be > 0")
    _require(cfg.variance in ("online", "known"), "variance", cfg.variance, "be 'online' or 'known'")
    _require(cfg.d_max >= 1, "d_max", cfg.d_max, "be >= 1")
    _require(cfg.T >= 0, "T", cfg.T, "be >= 0")
    _require(cfg.runs >= 1, "runs", cfg.runs, "be >= 1")
    _require(cfg.source in SOURCES, "source", cfg.source, f"be one of {', '.join(SOURCES)}")
    _require(cfg.lms_step > 0, "lms_step", cfg.lms_step, "be > 0")
    _require(cfg.diffusion_weights in ("uniform", "metropolis"), "diffusion_weights",
             cfg.diffusion_weights, "be 'uniform' or 'metropolis'")
    _require(0 < cfg.q < 1, "q", cfg.q, "lie in (0,1)")

    censoring = any(k in CENSORING for k in cfg.algorithms)
    given = (cfg.pi_star is not None) + (cfg.tau is not None)
    if censoring:
        _require(given == 1, "pi_star/tau", (cfg.pi_star, cfg.tau),
                 "have exactly one of pi_star or tau set for censoring algorithms")
    else:
        _require(given == 0, "pi_star/tau", (cfg.pi_star, cfg.tau),
                 "be unset when no censoring algorithm is selected")
    if cfg.pi_star is not None:
        _require(0 <= cfg.pi_star < 1, "pi_star", cfg.pi_star, "lie in [0,1)")
    if cfg.tau is not None:
        _require(cfg.tau >= 0, "tau", cfg.tau, "be >= 0")

    if cfg.source == "csv":
        _require(bool(cfg.csv_path), "path", cfg.csv_path, "be set in [csv] when source = csv")
        _require(len(cfg.feature_cols) >= 1, "feature_cols", cfg.feature_cols, "list at least one column")
        _require(cfg.p == len(cfg.feature_cols), "p", cfg.p, "equal the number of feature_cols")
        _require(cfg.variance == "online", "variance", cfg.variance, "be 'online' for csv data (noise variance unknown)")
        if cfg.max_records is not None:
            _require(cfg.max_records >= 1, "max_records", cfg.max_records, "be >= 1")
