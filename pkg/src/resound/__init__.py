"""resound: two-stage 48 kHz speech repair.

Spectrum-domain GAN restoration followed by parallel fullband/wideband
enhancement, with the matching loss suite, degradation simulator, toy
training harness and real-time-factor benchmark.
"""

__version__ = "0.1.0"
