"""Joint UD/UDS parser: configuration, layers, parser and checkpoints."""

from .checkpoint import (
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    load_checkpoint_bytes,
    read_checkpoint,
    save_checkpoint,
    transfer_init,
)
from .config import LOSS_COMPONENTS, SEARCH_GRID, ConfigurationError, Mode, ModelConfig
from .layers import Module, ScaleNorm, causal_mask, sinusoid
from .parser import (
    DecodeLengthError,
    DecoderState,
    JointParser,
    MixtureLayout,
    OracleOutput,
    StepFeatures,
    SyntacticParse,
    Target,
    build_target,
)

__all__ = [name for name in dir() if not name.startswith("_")]
