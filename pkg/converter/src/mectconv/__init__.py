"""Batch conversion of HDF5 and MetaIO sources into MSV/MSL/MSS containers."""

__version__ = "0.1.0"
