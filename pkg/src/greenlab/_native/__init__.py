"""Backend selection for the tricubic contraction.

Imports the compiled kernel when it has been built, otherwise the
numpy fallback; setting GREENLAB_NO_NATIVE in the environment forces
the fallback.  Both backends implement the same evaluate contract and
are compared for parity in tests and timed in benchmarks.
"""

import os

from . import fallback

BACKEND = "python"
_impl = fallback

if not os.environ.get("GREENLAB_NO_NATIVE"):
    try:
        from . import _spline3 as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        pass

evaluate = _impl.evaluate

__all__ = ["BACKEND", "evaluate", "fallback"]
