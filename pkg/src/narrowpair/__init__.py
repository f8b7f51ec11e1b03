"""Simulation and analysis of a narrowband SPDC photon-pair source.

Modules: ``crystal`` (dispersion, phase matching, focusing), ``spectral``
(SPDC envelope and Fabry-Perot filter line), ``pairsim`` (Monte-Carlo
pair/detection streams), ``correlator`` (coincidence histograms and
ring-down fits), ``tomography`` (two-photon state reconstruction and
entanglement measures), ``config``/``pipeline``/``cli`` (reproducible runs).
"""

__version__ = "0.1.0"
