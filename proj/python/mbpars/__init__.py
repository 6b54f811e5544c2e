"""Model-based derivative-free policy search for emergency load-shedding
voltage control: synthetic grid environment, learned dynamics surrogate,
UVLS baseline, imitation warm start, and the parallel random-search trainer.

The compiled `_core` module carries the implementation; this package
re-exports its public surface.
"""

from mbpars._core import *  # noqa: F401,F403
from mbpars._core import __doc__ as _core_doc

__all__ = [name for name in dir() if not name.startswith("_")]
