"""Batch harness for the corruption / restoration / segmentation / pose-fit
benchmark."""

from .config import ConfigError, FilterSpec, PipelineConfig, load_config
from .pipeline import (DataError, StageError, cmd_corrupt, cmd_denoise, cmd_evaluate,
                       cmd_generate, cmd_pipeline, cmd_segment, conditions)

__all__ = ["ConfigError", "DataError", "FilterSpec", "PipelineConfig", "StageError",
           "cmd_corrupt", "cmd_denoise", "cmd_evaluate", "cmd_generate", "cmd_pipeline",
           "cmd_segment", "conditions", "load_config"]
