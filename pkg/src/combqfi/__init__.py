"""Upper bounds on adaptive quantum Fisher information under correlated noise."""

__version__ = "0.1.0"
