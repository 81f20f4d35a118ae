"""Spatially-adaptive sinusoidal networks and SIREN baselines for 2D image fitting."""

__version__ = "0.1.0"

from .training import TrainConfig, load_config, toy_config, train  # noqa: E402

__all__ = ["TrainConfig", "load_config", "toy_config", "train", "__version__"]
