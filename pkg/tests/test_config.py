"""
Tests for the typed configuration layer: validators, YAML defaults, flag
overrides and run config loading.
"""

import json
import math

import pytest
from pydantic import ValidationError

from sparse_miso.config import (
    Command,
    DomainParams,
    PrecoderMode,
    RunConfig,
    SolverConfig,
    StepRule,
    TrialConfig,
    TuneTarget,
    build_run_config,
    load_defaults,
    load_run_config,
)
from sparse_miso.errors import ConfigError

PARAMS = {"rho": 1.0, "delta": 0.5, "lambda1": 0.3, "lambda2": 0.005, "p_cap": 10.0, "sigma2": 0.25}


class TestDomainParams:
    """Parameter invariants."""

    @pytest.mark.parametrize("field, value", [("rho", 0.0), ("delta", -1.0), ("lambda1", -0.1), ("p_cap", 0.0), ("sigma2", -1.0)])
    def test_rejects_out_of_range(self, field, value):
        with pytest.raises(ValidationError):
            DomainParams(**{**PARAMS, field: value})

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            DomainParams(**{**PARAMS, "lambda2": math.inf})

    def test_admissibility(self):
        assert DomainParams(**PARAMS).admissible
        assert not DomainParams(**{**PARAMS, "lambda1": 0.0, "lambda2": 0.0}).admissible
        assert DomainParams(**{**PARAMS, "lambda1": 0.0, "lambda2": 0.0, "delta": 1.0}).admissible

    def test_with_returns_validated_copy(self):
        params = DomainParams(**PARAMS)
        changed = params.with_(rho=2.0)
        assert changed.rho == 2.0
        assert params.rho == 1.0
        assert changed.amplitude_cap == pytest.approx(math.sqrt(10.0))
        with pytest.raises(ConfigError):
            params.with_(rho=-2.0)
        with pytest.raises(ConfigError):
            params.with_(lambda1=-0.1)

    def test_frozen(self):
        params = DomainParams(**PARAMS)
        with pytest.raises(ValidationError):
            params.rho = 3.0


class TestTrialAndTarget:
    def test_delta_must_match_dimensions(self):
        with pytest.raises(ValidationError):
            TrialConfig(n=100, m=60, params=DomainParams(**PARAMS))

    def test_threshold_below_amplitude_cap(self):
        with pytest.raises(ValidationError):
            TrialConfig(n=100, m=50, params=DomainParams(**PARAMS), threshold=4.0)

    def test_trial_defaults(self):
        trial = TrialConfig(n=100, m=50, params=DomainParams(**PARAMS))
        assert (trial.num_channels, trial.num_symbol_draws, trial.ref_sample_size) == (10, 50, 100_000)

    @pytest.mark.parametrize("kappa", [0.0, 1.01])
    def test_kappa_range(self, kappa):
        with pytest.raises(ValidationError):
            TuneTarget(kappa_target=kappa, pb_target=1.0)

    def test_target_checked_against_cap(self):
        target = TuneTarget(kappa_target=0.5, pb_target=1.0, t_x=5.0, mode=PrecoderMode.THRESH)
        with pytest.raises(ConfigError):
            target.check_against(DomainParams(**PARAMS))


class TestRunConfig:
    def test_sweep_needs_grid(self):
        with pytest.raises(ConfigError):
            build_run_config({"command": "SWEEP_LAMBDA1", "params": PARAMS}, defaults={})

    def test_grid_strictly_increasing(self):
        raw = {"command": "SWEEP_LAMBDA1", "params": PARAMS, "sweep_grid": [0.1, 0.1, 0.2]}
        with pytest.raises(ConfigError):
            build_run_config(raw, defaults={})

    def test_simulate_needs_trial(self):
        with pytest.raises(ConfigError):
            build_run_config({"command": "SIMULATE", "params": PARAMS}, defaults={})

    def test_tune_needs_target(self):
        with pytest.raises(ConfigError):
            build_run_config({"command": "TUNE", "params": PARAMS}, defaults={})

    def test_flags_override_file_values(self):
        raw = {"command": "SIMULATE", "params": PARAMS, "trial": {"n": 100, "m": 50, "seed": 1}}
        config = build_run_config(raw, {"rho": 2.0, "seed": 99, "out": "elsewhere.csv", "tx": None}, defaults={})

        assert config.params.rho == 2.0
        assert config.trial.params.rho == 2.0
        assert config.trial.seed == 99
        assert config.output_path == "elsewhere.csv"

    def test_flags_create_target(self):
        config = build_run_config({"command": "TUNE", "params": PARAMS}, {"kappa": 0.5, "pb": 2.0}, defaults={})
        assert config.target == TuneTarget(kappa_target=0.5, pb_target=2.0)

    def test_trial_flags_ignored_without_trial(self):
        config = build_run_config({"command": "SADDLE", "params": PARAMS}, {"n": 64, "seed": 3}, defaults={})
        assert config.trial is None

    def test_simulate_flags_create_trial(self):
        params = {key: value for key, value in PARAMS.items() if key != "delta"}
        config = build_run_config(
            {"command": "SIMULATE", "params": params}, {"n": 64, "m": 16, "seed": 7, "tx": 0.4}, defaults={}
        )

        assert (config.trial.n, config.trial.m, config.trial.seed) == (64, 16, 7)
        assert config.trial.threshold == 0.4
        assert config.params.delta == 0.25
        assert config.threshold is None

    def test_dimension_flags_attach_trial_to_sweeps(self):
        raw = {"command": "SWEEP_LAMBDA1", "params": PARAMS, "sweep_grid": [0.1, 0.2]}
        config = build_run_config(raw, {"n": 100, "m": 50}, defaults={})
        assert config.trial.params == config.params

    def test_threshold_flag_for_predict_is_standalone(self):
        config = build_run_config({"command": "PREDICT", "params": PARAMS}, {"tx": 0.5}, defaults={})
        assert config.threshold == 0.5
        assert config.target is None

    def test_threshold_flag_for_tuning_goes_to_target(self):
        config = build_run_config(
            {"command": "TUNE", "params": PARAMS}, {"kappa": 0.4, "pb": 2.8, "tx": 0.5}, defaults={}
        )
        assert config.target.t_x == 0.5
        assert config.threshold is None

    def test_standalone_threshold_below_amplitude_cap(self):
        with pytest.raises(ConfigError):
            build_run_config({"command": "PREDICT", "params": PARAMS}, {"tx": 4.0}, defaults={})

    @pytest.mark.parametrize(
        "command, grid",
        [("SWEEP_LAMBDA1", [-0.1, 0.3]), ("SWEEP_PB", [1.0, 12.0]), ("SWEEP_THRESHOLD", [0.0, 1.0])],
    )
    def test_sweep_values_outside_domain(self, command, grid):
        raw = {
            "command": command,
            "params": PARAMS,
            "target": {"kappa_target": 0.4, "pb_target": 2.8},
            "sweep_grid": grid,
        }
        with pytest.raises(ConfigError):
            build_run_config(raw, defaults={})

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            build_run_config({"command": "SADDLE", "params": PARAMS}, {"colour": "blue"}, defaults={})

    def test_defaults_fill_solver_and_trial(self):
        defaults = {
            "solver": {"max_iters": 123, "step_rule": "BACKTRACKING"},
            "trial": {"num_channels": 4},
            "tuner": {"threshold_grid_size": 17},
        }
        raw = {
            "command": "SIMULATE",
            "params": PARAMS,
            "solver": {"tol_kkt": 1e-7},
            "trial": {"n": 100, "m": 50, "num_channels": 2},
        }
        config = build_run_config(raw, defaults=defaults)

        assert config.solver == SolverConfig(max_iters=123, tol_kkt=1e-7, step_rule=StepRule.BACKTRACKING)
        assert config.trial.num_channels == 2
        assert config.threshold_grid_size == 17

    def test_command_enum(self):
        config = RunConfig(command=Command.SADDLE, params=DomainParams(**PARAMS))
        assert config.sweep_grid == []
        assert config.threads == 1


class TestLoading:
    def test_repository_defaults(self):
        defaults = load_defaults()
        assert defaults["solver"]["max_iters"] == 50_000
        assert defaults["trial"]["num_symbol_draws"] == 50

    def test_defaults_location_from_environment(self, tmp_path, monkeypatch):
        path = tmp_path / "defaults.yaml"
        path.write_text("solver:\n  max_iters: 7\n")
        monkeypatch.setenv("SPARSE_MISO_DEFAULTS", str(path))
        assert load_defaults() == {"solver": {"max_iters": 7}}

    def test_missing_defaults_file(self, tmp_path):
        assert load_defaults(tmp_path / "absent.yaml") == {}

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_sidecar_is_accepted(self, tmp_path):
        config = build_run_config({"command": "PREDICT", "params": PARAMS})
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"library_version": "0", "config": config.model_dump(mode="json")}))
        assert load_run_config(path) == config
