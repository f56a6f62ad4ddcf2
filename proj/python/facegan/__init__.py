"""UV-map face autoencoder GAN."""

from ._facegan import *  # noqa: F401,F403
from ._facegan import DataError, Error, Mesh, Model, NumericalError, ShapeError, UVMap

__all__ = [name for name in dir() if not name.startswith("_")]
