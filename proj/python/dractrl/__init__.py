"""Toy diffusion-transformer controllable generation (C++ core)."""

from ._core import *  # noqa: F401,F403
from ._core import Model, __doc__  # noqa: F401
