import json
import logging
import os
from typing import Any, Dict

from pydantic import BaseModel, Field, ValidationError

from src.config.settings import (
    CohortConfig,
    GbtConfig,
    GeometryConfig,
    MSPNetConfig,
    RuntimeConfig,
    SpectraConfig,
    TsneConfig,
)
from src.errors import UsageError

logger = logging.getLogger(__name__)

ENV_PREFIX = "ABDOSHAPE_"

# environment variable suffix -> (section, key, parser)
ENV_OVERRIDES = {
    "THREADS": ("runtime", "threads", int),
    "PRECISION": ("runtime", "precision", str),
    "LOG_LEVEL": ("runtime", "log_level", str),
    "LOG_JSON": ("runtime", "log_json", lambda v: v.lower() in {"1", "true", "yes"}),
    "DESCRIPTOR_LENGTH": ("spectra", "descriptor_length", int),
    "POINTS": ("geometry", "points_per_cloud", int),
    "SEED": ("runtime", "seed", int),
    "COHORT_SEED": ("cohort", "seed", int),
}


class Config(BaseModel):
    """Main configuration"""
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    spectra: SpectraConfig = Field(default_factory=SpectraConfig)
    cohort: CohortConfig = Field(default_factory=CohortConfig)
    mspnet: MSPNetConfig = Field(default_factory=MSPNetConfig)
    gbt: GbtConfig = Field(default_factory=GbtConfig)
    tsne: TsneConfig = Field(default_factory=TsneConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)


class ConfigManager:
    """Configuration manager for loading and managing pipeline settings"""

    def __init__(self, config_file: str):
        self.config_file = config_file
        self.config = Config()
        self._load_config()

    def _load_config(self):
        """Load configuration from file"""
        try:
            if os.path.exists(self.config_file):
                with open(self.config_file, 'r') as f:
                    config_data = json.load(f)
                self.config = Config.model_validate(config_data)
            else:
                logger.info(f"Config file {self.config_file} not found, using defaults")
                self.config = Config()
        except json.JSONDecodeError as e:
            logger.error(f"Failed to parse config file: {e}")
            raise UsageError(f"Invalid JSON in config file {self.config_file}: {e}", cause=e)
        except ValidationError as e:
            logger.error(f"Invalid configuration: {e}")
            raise

    def update_config(self, updates: Dict[str, Any], persist: bool = False) -> None:
        """Deep-merge updates into the configuration and re-validate"""
        try:
            current_config = self.config.model_dump()
            updated_config = self._deep_merge(current_config, updates)
            self.config = Config.model_validate(updated_config)
            if persist:
                self.save_config()
        except ValidationError as e:
            logger.error(f"Failed to update config: {e}")
            raise

    def _deep_merge(self, d1: Dict, d2: Dict) -> Dict:
        """Deep merge two dictionaries"""
        result = d1.copy()
        for key, value in d2.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = value
        return result

    def save_config(self):
        """Save current configuration to file"""
        directory = os.path.dirname(self.config_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.config_file, 'w') as f:
            json.dump(self.config.model_dump(), f, indent=2, sort_keys=True)
        logger.info(f"Configuration saved to {self.config_file}")

    def get_config(self) -> Config:
        """Get current configuration"""
        return self.config

    def reset_config(self):
        """Reset configuration to defaults"""
        self.config = Config()
        logger.info("Configuration reset to defaults")

    def load_environment_config(self) -> bool:
        """Load overrides from ABDOSHAPE_* environment variables"""
        env_updates: Dict[str, Dict[str, Any]] = {}
        for suffix, (section, key, parse) in ENV_OVERRIDES.items():
            raw = os.getenv(ENV_PREFIX + suffix)
            if raw is None or raw == "":
                continue
            try:
                env_updates.setdefault(section, {})[key] = parse(raw)
            except ValueError as e:
                logger.warning(f"Ignoring {ENV_PREFIX + suffix}={raw!r}: {e}")

        if env_updates:
            self.update_config(env_updates)
            logger.debug(f"Applied environment overrides: {sorted(env_updates)}")
            return True
        return False

    def snapshot(self) -> Dict[str, Any]:
        """JSON-ready copy of the active configuration"""
        return self.config.model_dump(mode="json")

    def export_config(self, filepath: str):
        """Export configuration to file"""
        with open(filepath, 'w') as f:
            json.dump(self.snapshot(), f, indent=2, sort_keys=True)
        logger.debug(f"Exported config to: {filepath}")
