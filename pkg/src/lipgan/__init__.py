"""Audio-driven talking-face generation with a lip-sync discriminator."""

__version__ = "0.1.0"
