"""Recessed-electrode laterally excited BAW resonators: FEM dispersion sweeps and mBVD fitting."""

__version__ = "0.1.0"
