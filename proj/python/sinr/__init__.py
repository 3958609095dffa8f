"""Python bindings for the sinr species range library."""

from ._sinr import *  # noqa: F401,F403
from ._sinr import __doc__  # noqa: F401
