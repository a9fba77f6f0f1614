"""Experiment configuration, pipeline steps and the ``spatial-psl`` command line."""

from .config import ConfigError, DataConfig, ExperimentConfig, ModelConfig, load_config, parse_config

__all__ = ["ConfigError", "DataConfig", "ExperimentConfig", "ModelConfig", "load_config", "parse_config"]
