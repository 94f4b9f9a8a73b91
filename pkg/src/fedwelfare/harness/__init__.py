"""Scenario configuration, data provisioning and experiment execution."""

from .config import ScenarioConfig, load_config, load_preset, resolve_config
from .experiment import aggregate_dir, run_experiment, run_sweep
from .simulation import ReplicationResult, run_replication
