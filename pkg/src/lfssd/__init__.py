"""Selective synaptic dampening (SSD) and its label-free variant (LFSSD)."""

__version__ = "0.1.0"
