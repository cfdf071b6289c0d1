"""Unified-token decision models: python surface over the C++ core."""

try:
    from ._utr import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:
    from _utr import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
