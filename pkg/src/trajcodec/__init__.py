"""Trajectory motion codec with a guided toy-diffusion decoder."""

from .bitstream import decode, encode, rate_report
from .config import PipelineConfig, load_config
from .errors import CodecError, InvariantViolation
from .sampler import SparseInstance, SparseTrajectorySet

__all__ = [
    "CodecError",
    "InvariantViolation",
    "PipelineConfig",
    "SparseInstance",
    "SparseTrajectorySet",
    "decode",
    "encode",
    "load_config",
    "rate_report",
]
