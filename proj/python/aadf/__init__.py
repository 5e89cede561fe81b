"""Attack-aware forgery detection: attacks, detector, training protocol and metrics."""

from ._aadf import *  # noqa: F401,F403
from ._aadf import __doc__  # noqa: F401
