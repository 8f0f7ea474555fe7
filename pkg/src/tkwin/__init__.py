"""Top-K window attention, a convolutional feature stem and a coarse-to-fine matcher on numpy."""

from .attention import (
    AttentionParams,
    WindowContext,
    attention_block,
    build_kv,
    channel_attention,
    init_attention,
    select_top_k,
    top_k_window_attention,
    window_average,
    window_partition,
    window_reverse,
    window_similarity,
)
from .config import PipelineConfig
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
    PartitionError,
    TkwinError,
)
from .gradcheck import GradReport, grad_check
from .homography import RansacOptions, estimate_homography
from .matcher import MatchSet, interaction_schedule, match_pipeline
from .stem import init_stem, stem_forward
from .synthetic import gen_pair
from .tensor import DiffTensor, backward

__version__ = "0.1.0"
