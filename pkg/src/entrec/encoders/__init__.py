"""Query encoders: averaged-embedding DNN and BiLSTM with attention pooling.

Both encoders share one functional contract. Trainable tensors live in a
plain dict of float64 arrays owned by the caller; the encoder object holds
only configuration, non-trainable state (batch-norm running statistics)
and a parameter version counter used to reject stale activation caches.
"""

from .base import BaseEncoder, BaseEncoderConfig
from .bilstm import EnhancedEncoder, EnhancedEncoderConfig

ENCODER_KINDS = ("base", "enhanced")


def make_encoder(kind: str, config: dict):
    """Instantiate an encoder from its checkpoint-header config dict."""
    if kind == "base":
        return BaseEncoder(BaseEncoderConfig(**config))
    if kind == "enhanced":
        return EnhancedEncoder(EnhancedEncoderConfig(**config))
    raise ValueError(f"unknown encoder kind {kind!r}")


__all__ = [
    "BaseEncoder",
    "BaseEncoderConfig",
    "EnhancedEncoder",
    "EnhancedEncoderConfig",
    "ENCODER_KINDS",
    "make_encoder",
]
