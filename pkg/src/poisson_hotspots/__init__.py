"""Hot-spot detection and localization in spatio-temporal count tensors."""

__version__ = "0.1.0"
