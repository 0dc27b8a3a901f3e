"""Standalone SOFA to HRD1 converter.

Reads spatially oriented acoustic data (SOFA, an HDF5/netCDF container)
and writes the HRD1 portable HRIR format. No signal processing happens
here; IR samples are copied through as 32-bit floats and source
positions are translated into the HRD1 coordinate convention.
"""

__version__ = "0.1.0"
