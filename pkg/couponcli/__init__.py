__version__ = "0.1.0"

from .couponcli import Couponcli  # noqa: F401
