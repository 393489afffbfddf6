"""Self-supervised 3D face reconstruction with a neural rendering module."""

try:
    from ._facelab import *  # noqa: F401,F403  (installed layout)
except ImportError:
    from _facelab import *  # noqa: F401,F403  (build-tree layout)

__version__ = "0.1.0"
