"""
qcap - physics-aware capability learning for noisy Clifford circuits
"""

__version__ = "1.0.0"
