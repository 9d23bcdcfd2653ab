"""Convolutional, recurrent and fully connected emotion recognizers on log-Mel/MFCC inputs."""

from .errors import CLDNNError

__version__ = "0.1.0"

__all__ = ["CLDNNError", "__version__"]
