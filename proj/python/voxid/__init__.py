"""Python bindings for the voxid core library."""

try:
    from ._voxid import *  # noqa: F401,F403
    from ._voxid import __version__
except ImportError:
    from _voxid import *  # noqa: F401,F403
    from _voxid import __version__
