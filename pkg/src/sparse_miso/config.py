"""
Typed configuration for the precoding library and its CLI.

All records are frozen pydantic models; validators enforce the parameter
invariants so that downstream numerics can assume well-formed inputs.
"""

import json
import math
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

load_dotenv()

DEFAULTS_PATH = Path(__file__).resolve().parents[2] / "config" / "solver_defaults.yaml"


class StepRule(str, Enum):
    FIXED_LIPSCHITZ = "FIXED_LIPSCHITZ"
    BACKTRACKING = "BACKTRACKING"


class PrecoderMode(str, Enum):
    L1 = "L1"
    THRESH = "THRESH"


class Command(str, Enum):
    SADDLE = "SADDLE"
    PREDICT = "PREDICT"
    SIMULATE = "SIMULATE"
    TUNE = "TUNE"
    SWEEP_LAMBDA1 = "SWEEP_LAMBDA1"
    SWEEP_PB = "SWEEP_PB"
    SWEEP_THRESHOLD = "SWEEP_THRESHOLD"
    SWEEP_TSNR = "SWEEP_TSNR"


SWEEP_COMMANDS = {
    Command.SWEEP_LAMBDA1,
    Command.SWEEP_PB,
    Command.SWEEP_THRESHOLD,
    Command.SWEEP_TSNR,
}

TARGET_COMMANDS = {Command.TUNE, Command.SWEEP_PB, Command.SWEEP_THRESHOLD, Command.SWEEP_TSNR}


class DomainParams(BaseModel):
    """The constants (rho, delta, lambda1, lambda2, P, sigma2) behind every formula."""

    model_config = ConfigDict(frozen=True)

    rho: float = Field(gt=0)
    delta: float = Field(gt=0)
    lambda1: float = Field(default=0.0, ge=0)
    lambda2: float = Field(default=0.0, ge=0)
    p_cap: float = Field(gt=0)
    sigma2: float = Field(default=0.0, ge=0)

    @field_validator("*")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("parameters must be finite")
        return value

    @property
    def admissible(self) -> bool:
        """True unless lambda1 = lambda2 = 0 with delta < 1."""
        return max(self.lambda1, self.lambda2) > 0 or self.delta >= 1

    @property
    def amplitude_cap(self) -> float:
        return math.sqrt(self.p_cap)

    def with_(self, **changes: float) -> "DomainParams":
        """Validated copy with some fields replaced; invalid values raise ConfigError."""
        try:
            return DomainParams(**{**self.model_dump(), **changes})
        except ValidationError as exc:
            raise ConfigError(f"invalid parameter change {changes}:\n{exc}") from exc


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=50_000, ge=1)
    tol_obj: float = Field(default=1e-12, gt=0)
    tol_kkt: float = Field(default=1e-9, gt=0)
    step_rule: StepRule = StepRule.FIXED_LIPSCHITZ
    power_iters: int = Field(default=100, ge=1)
    power_tol: float = Field(default=1e-10, gt=0)


class TrialConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    params: DomainParams
    num_channels: int = Field(default=10, ge=1)
    num_symbol_draws: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    threshold: Optional[float] = Field(default=None, gt=0)
    ref_sample_size: int = Field(default=100_000, ge=1)
    max_nonconverged_fraction: float = Field(default=0.1, ge=0, le=1)

    @model_validator(mode="after")
    def _delta_matches_dims(self) -> "TrialConfig":
        if not math.isclose(self.params.delta, self.m / self.n, rel_tol=1e-12):
            raise ValueError(
                f"params.delta={self.params.delta} does not match m/n={self.m}/{self.n}"
            )
        if self.threshold is not None and self.threshold >= self.params.amplitude_cap:
            raise ValueError("threshold must lie in (0, sqrt(P))")
        return self


class TuneTarget(BaseModel):
    """Target sparsity and power; THRESH mode without t_x asks for the SINAD-optimal threshold."""

    model_config = ConfigDict(frozen=True)

    kappa_target: float = Field(gt=0, le=1)
    pb_target: float = Field(gt=0)
    t_x: Optional[float] = Field(default=None, gt=0)
    mode: PrecoderMode = PrecoderMode.L1

    def check_against(self, params: DomainParams) -> None:
        if self.pb_target >= params.p_cap:
            raise ConfigError(
                f"pb_target={self.pb_target} must be below the per-antenna cap P={params.p_cap}"
            )
        if self.t_x is not None and self.t_x >= params.amplitude_cap:
            raise ConfigError(f"t_x={self.t_x} must lie in (0, sqrt(P))")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: Command
    params: DomainParams
    solver: SolverConfig = SolverConfig()
    trial: Optional[TrialConfig] = None
    target: Optional[TuneTarget] = None
    sweep_grid: List[float] = Field(default_factory=list)
    # t_x for PREDICT and SWEEP_LAMBDA1 runs that have no target section
    threshold: Optional[float] = Field(default=None, gt=0)
    threshold_grid_size: int = Field(default=200, ge=2)
    output_path: str = "results/run.csv"
    threads: int = Field(default=1, ge=1)

    @field_validator("sweep_grid")
    @classmethod
    def _strictly_increasing(cls, grid: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("sweep_grid must be strictly increasing")
        return grid

    @model_validator(mode="after")
    def _required_sections(self) -> "RunConfig":
        if self.command in SWEEP_COMMANDS and not self.sweep_grid:
            raise ValueError(f"{self.command.value} needs a non-empty sweep_grid")
        if self.command is Command.SIMULATE and self.trial is None:
            raise ValueError("SIMULATE needs a trial section")
        if self.command in TARGET_COMMANDS and self.target is None:
            raise ValueError(f"{self.command.value} needs a target section")
        if self.target is not None:
            self.target.check_against(self.params)
        if self.threshold is not None and self.threshold >= self.params.amplitude_cap:
            raise ValueError(f"threshold={self.threshold} must lie in (0, sqrt(P))")
        self._check_grid_domain()
        return self

    def _check_grid_domain(self) -> None:
        grid = self.sweep_grid
        if not grid:
            return
        if self.command is Command.SWEEP_LAMBDA1 and grid[0] < 0:
            raise ValueError(f"lambda1 sweep values must be >= 0, got {grid[0]}")
        if self.command is Command.SWEEP_PB and not (grid[0] > 0 and grid[-1] < self.params.p_cap):
            raise ValueError(f"P_b sweep values must lie in (0, P={self.params.p_cap})")
        if self.command is Command.SWEEP_THRESHOLD and not (
            grid[0] > 0 and grid[-1] < self.params.amplitude_cap
        ):
            raise ValueError(f"threshold sweep values must lie in (0, sqrt(P)={self.params.amplitude_cap:.6g})")


def load_defaults(path: Optional[Path] = None) -> Dict[str, Any]:
    """Read the YAML defaults; SPARSE_MISO_DEFAULTS overrides the location."""
    path = Path(path or os.getenv("SPARSE_MISO_DEFAULTS", DEFAULTS_PATH))
    if not path.exists():
        logger.debug(f"No defaults file at {path}; using built-in defaults")
        return {}
    with open(path, "r") as f:
        return yaml.safe_load(f) or {}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


# flag name -> (section, field)
OVERRIDE_FIELDS = {
    "rho": ("params", "rho"),
    "delta": ("params", "delta"),
    "lambda1": ("params", "lambda1"),
    "lambda2": ("params", "lambda2"),
    "pcap": ("params", "p_cap"),
    "sigma2": ("params", "sigma2"),
    "n": ("trial", "n"),
    "m": ("trial", "m"),
    "seed": ("trial", "seed"),
    "kappa": ("target", "kappa_target"),
    "pb": ("target", "pb_target"),
}

def _threshold_field(command: Any) -> Tuple[Optional[str], str]:
    """Where --tx lands: the trial for SIMULATE, the target for tuning runs, else the run itself."""
    try:
        command = Command(command)
    except ValueError:
        return (None, "threshold")
    if command is Command.SIMULATE:
        return ("trial", "threshold")
    if command in TARGET_COMMANDS:
        return ("target", "t_x")
    return (None, "threshold")


def build_run_config(
    raw: Dict[str, Any],
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Merge YAML defaults, the raw JSON config and flag overrides (in that order of
    increasing precedence) and validate the result.

    The trial section inherits the top-level params, so a single --rho flag moves
    both predictions and simulations. Trial flags create the trial section for
    SIMULATE, or for any command when both --n and --m are given; otherwise they
    are ignored. --tx goes to trial.threshold for SIMULATE, to target.t_x for
    tuning commands and to the run-level threshold for the rest.
    """
    defaults = load_defaults() if defaults is None else defaults
    data = dict(raw)
    data["params"] = dict(data.get("params") or {})
    data["solver"] = _deep_merge(defaults.get("solver", {}), raw.get("solver", {}))
    if "threshold_grid_size" not in data and "tuner" in defaults:
        data["threshold_grid_size"] = defaults["tuner"].get("threshold_grid_size", 200)

    overrides = {flag: value for flag, value in (overrides or {}).items() if value is not None}
    trial_flags = {flag for flag in overrides if OVERRIDE_FIELDS.get(flag, ("",))[0] == "trial"}
    if data.get("trial") is None and trial_flags:
        if data.get("command") == Command.SIMULATE.value or {"n", "m"} <= trial_flags:
            data["trial"] = {}
        else:
            logger.debug(f"ignoring {sorted(trial_flags)}: {data.get('command')} run has no trial section")

    for flag, value in overrides.items():
        if flag == "out":
            data["output_path"] = value
        elif flag == "threads":
            data["threads"] = value
        elif flag == "tx":
            section, field = _threshold_field(data.get("command"))
            if section is None:
                data[field] = value
            else:
                data[section] = {**(data.get(section) or {}), field: value}
        elif flag in OVERRIDE_FIELDS:
            section, field = OVERRIDE_FIELDS[flag]
            if section == "trial" and data.get("trial") is None:
                continue
            data[section] = {**(data.get(section) or {}), field: value}
        else:
            raise ConfigError(f"unknown override: {flag}")

    if data.get("trial") is not None:
        trial = _deep_merge(defaults.get("trial", {}), data["trial"])
        if "delta" not in data["params"] and trial.get("n") and trial.get("m"):
            data["params"]["delta"] = trial["m"] / trial["n"]
        trial["params"] = data["params"]
        data["trial"] = trial

    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config:\n{exc}") from exc


def load_run_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if "command" not in raw and isinstance(raw.get("config"), dict):
        # a results sidecar carries the resolved config under "config"
        raw = raw["config"]
    return build_run_config(raw, overrides)
