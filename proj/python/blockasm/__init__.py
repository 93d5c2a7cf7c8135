"""Block assembly planning: scene generation, exact packing, policies and training."""

from ._core import (
    ConfigError,
    Error,
    InvalidAction,
    InvalidState,
    ParseError,
    Scene,
    evaluate,
    play,
    train,
)

__all__ = [
    "ConfigError",
    "Error",
    "InvalidAction",
    "InvalidState",
    "ParseError",
    "Scene",
    "evaluate",
    "play",
    "train",
]
