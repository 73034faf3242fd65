from .config import (
    ExperimentConfig,
    apply_overrides,
    dump_config,
    load_config,
    network_spec_from_config,
    parse_config,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "apply_overrides",
    "network_spec_from_config",
]
