"""Forward and inverse modelling of NV-center ODMR spectra in a diamond anvil cell."""

__version__ = "0.1.0"
