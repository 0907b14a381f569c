"""
sasentangle - quantum model of broadband Stokes/anti-Stokes photon pairs
in centrosymmetric cubic crystals.
"""

__version__ = "1.0.0"
