"""Verification tools: spectra, least squares, metrics and meshes."""
