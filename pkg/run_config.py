"""Run configuration: CLI flags override the config file, which overrides built-in defaults."""

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

from dotenv import dotenv_values

from core.cflow import CFlowParams
from core.evaluation import SweepConfig
from core.flow_io import DEFAULT_MAX_PIXELS
from core.hypothesizer import WindowMode
from errors import ConfigError

ENV_PREFIX = "CFLOW_"

MODE_SETS = {
    "gt": (WindowMode.GT,),
    "pred": (WindowMode.PRED,),
    "mixed": (WindowMode.MIXED,),
    "both": (WindowMode.GT, WindowMode.PRED),
    "all": (WindowMode.GT, WindowMode.PRED, WindowMode.MIXED),
}


def parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_float_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(part) for part in str(text).replace(" ", "").split(",") if part)


@dataclass
class RunConfig:
    subcommand: str = "score"
    tracks: Optional[str] = None
    flows: Optional[str] = None
    out: Optional[str] = None
    path: Optional[str] = None
    scenarios: Optional[str] = None
    k: int = 5
    min_samples: int = 3
    tau_d: float = 1.0
    tau_u: float = 0.1
    tau_eps: float = 1e-3
    xi: tuple = (0.1, 0.3)
    ttc_bins: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, math.inf)
    iou_threshold: float = 0.5
    mode: str = "both"
    fill_gaps: bool = False
    split_fn: bool = False
    partial_windows: bool = False
    plots: bool = False
    jobs: int = 1
    seed: Optional[int] = None
    force: bool = False
    max_pixels: int = DEFAULT_MAX_PIXELS

    @property
    def params(self) -> CFlowParams:
        return CFlowParams(k=self.k, min_samples=self.min_samples, tau_d=self.tau_d, tau_u=self.tau_u,
                           tau_eps=self.tau_eps)

    @property
    def sweep_config(self) -> SweepConfig:
        return SweepConfig(thresholds=self.xi, ttc_bin_edges=self.ttc_bins, iou_threshold=self.iou_threshold,
                           split_fn=self.split_fn)

    @property
    def modes(self):
        return MODE_SETS[self.mode]

    def validate(self):
        self.params.validate()
        self.sweep_config.validate()
        if self.mode not in MODE_SETS:
            raise ConfigError(f"mode must be one of {sorted(MODE_SETS)}, got {self.mode!r}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.max_pixels < 1:
            raise ConfigError(f"max_pixels must be >= 1, got {self.max_pixels}")
        return self

    def to_dict(self):
        data = asdict(self)
        data["xi"] = list(self.xi)
        data["ttc_bins"] = ["inf" if math.isinf(x) else x for x in self.ttc_bins]
        return data


# How a config-file string becomes a field value
_CONVERTERS = {
    int: int,
    float: float,
    bool: parse_bool,
    tuple: parse_float_list,
    str: str,
    Optional[str]: str,
    Optional[int]: int,
}

# Only these fields may come from a config file; paths and the subcommand stay on the command line
FILE_FIELDS = ("k", "min_samples", "tau_d", "tau_u", "tau_eps", "xi", "ttc_bins", "iou_threshold", "mode",
               "fill_gaps", "split_fn", "partial_windows", "plots", "jobs", "seed", "max_pixels")


def read_config_file(path) -> dict:
    """Field values from a dotenv-style file with CFLOW_* keys."""
    raw = dotenv_values(path)
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, text in raw.items():
        if not key.startswith(ENV_PREFIX):
            raise ConfigError(f"{path}: unexpected key {key!r} (keys start with {ENV_PREFIX})")
        name = key[len(ENV_PREFIX):].lower()
        if name == "config":
            continue
        if name not in FILE_FIELDS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            values[name] = _CONVERTERS[types[name]](text)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: bad value for {key}: {e}") from e
    return values


def build_run_config(subcommand, cli_values: dict, config_path=None) -> RunConfig:
    """Merges CLI values (None = not given) over the config file over the defaults."""
    merged = {"subcommand": subcommand}
    if config_path:
        merged.update(read_config_file(config_path))
    known = {f.name for f in fields(RunConfig)}
    for name, value in cli_values.items():
        if name in known and value is not None:
            merged[name] = value
    return RunConfig(**merged).validate()
