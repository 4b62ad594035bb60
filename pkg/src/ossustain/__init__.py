"""Forecast incubator-project sustainability from mailing-list and commit traces."""

__version__ = "0.1.0"
