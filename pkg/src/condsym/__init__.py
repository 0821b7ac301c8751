"""
condsym - Q-conditional symmetries of reaction-diffusion-convection equations.
"""

__version__ = "0.1.0"

from .cli import main  # noqa: E402

__all__ = ["main"]
