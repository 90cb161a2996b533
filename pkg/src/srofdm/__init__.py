"""Symbiotic-radio-over-OFDM link simulator.

A passive backscatter device rides on a primary OFDM transmission; the
receiver estimates the composite channel from comb pilots, detects the
primary QAM stream, re-estimates the channel from detected symbols, splits
direct and backscatter links with a short secondary preamble, and finally
detects the secondary PSK stream. This package simulates that chain at
frequency-domain and sample level, evaluates the matching closed-form BER
expressions, and drives seeded Monte Carlo parameter sweeps.
"""

from srofdm.numerics import RandomStream, SingularSystemError

__version__ = "0.1.0"

__all__ = ["RandomStream", "SingularSystemError", "__version__"]
