# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the opflow workflow graph and KV cache library."""

try:
    from ._opflow import *  # noqa: F401,F403
    from . import _opflow as _core
except ImportError:  # in-tree build: the extension sits next to the package on PYTHONPATH
    from _opflow import *  # noqa: F401,F403
    import _opflow as _core

__all__ = [n for n in dir(_core) if not n.startswith("_")]
__version__ = "0.1.0"
