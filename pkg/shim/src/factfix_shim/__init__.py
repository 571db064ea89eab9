"""Model shim: five JSON endpoints the correction engine consumes.

Wraps real checkpoints (local paths or hub ids) behind /embed, /entail,
/rerank, /spans, and proxies /generate to any completion-style upstream,
so the engine can swap its offline stubs for live models without code
changes.
"""

from .config import ShimConfig
from .app import create_app

__version__ = "0.1.0"
