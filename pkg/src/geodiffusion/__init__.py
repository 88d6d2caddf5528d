"""Environment-conditioned diffusion lab: metadata codecs, fusion, training, probes."""

__version__ = "0.1.0"
