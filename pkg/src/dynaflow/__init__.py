"""Dynamic flow images: rank-pooled optical flow summaries of video windows."""

from .errors import (
    ConfigurationError,
    ContractViolationError,
    DimensionError,
    DynaflowError,
    EmptyInputError,
    FormatError,
    LengthError,
    WindowError,
)
from .flowcore import FlowField, FlowSequence, GrayFrame, RgbFrame, read_flo, write_flo
from .preprocess import QuantizedFlowFrame, condition_frame, condition_sequence, quantize_flow, subtract_median, threshold_flow
from .rankpool import (
    DynamicFlowImage,
    DynamicImage,
    RankingProblem,
    SolverConfig,
    approximate_pool,
    build_problem,
    pool_flow,
    pool_rgb,
    rank_pool,
    render,
    smooth,
    solve,
    solve_with_info,
)
from .pipeline import ClipManifest, WindowSpec, make_windows, run_clip, run_clip_rgb
from .tvl1 import Tvl1Params, compute_flow, sequence_flow

__version__ = "0.1.0"

__all__ = [
    "ClipManifest", "ConfigurationError", "ContractViolationError", "DimensionError", "DynaflowError",
    "DynamicFlowImage", "DynamicImage", "EmptyInputError", "FlowField", "FlowSequence", "FormatError",
    "GrayFrame", "LengthError", "QuantizedFlowFrame", "RankingProblem", "RgbFrame", "SolverConfig",
    "Tvl1Params", "WindowError", "WindowSpec", "approximate_pool", "build_problem", "compute_flow",
    "condition_frame", "condition_sequence", "make_windows", "pool_flow", "pool_rgb", "quantize_flow",
    "rank_pool", "read_flo", "render", "run_clip", "run_clip_rgb", "sequence_flow", "smooth", "solve",
    "solve_with_info", "subtract_median", "threshold_flow", "write_flo",
]
