"""Meshless Purkinje-network / myocardium electrophysiology and electromechanics."""

__version__ = "0.1.0"
