"""robomesh: typed pub-sub middleware and a mobile-robot demo stack."""

__version__ = "0.1.0"
