from src.config.config_manager import Config, ConfigManager
from src.config.settings import (
    CohortConfig,
    GbtConfig,
    GeometryConfig,
    MSPNetConfig,
    RuntimeConfig,
    SpectraConfig,
    TsneConfig,
)

__all__ = [
    "Config",
    "ConfigManager",
    "CohortConfig",
    "GbtConfig",
    "GeometryConfig",
    "MSPNetConfig",
    "RuntimeConfig",
    "SpectraConfig",
    "TsneConfig",
]
