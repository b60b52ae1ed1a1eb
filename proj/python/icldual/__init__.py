"""Attention / dual-model numerical laboratory."""

from ._icldual import *  # noqa: F401,F403
from ._icldual import __version__  # noqa: F401
