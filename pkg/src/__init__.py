"""grp-urn - generalized rescaled Polya urn simulation and clustered goodness of fit."""

__version__ = "1.0.0"
