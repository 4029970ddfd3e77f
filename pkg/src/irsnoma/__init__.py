"""Energy-efficiency simulator for reflecting-surface-aided NOMA beamforming.

Pipeline per channel draw: geometric Rician synthesis, correlation-gated
user clustering, zero-forcing beams, closed-form power-coefficient
optimization (Stage 1), and lifted-matrix reflection optimization through
a dense barrier SDP solver (Stage 2), with a Monte Carlo harness and CLI.
"""

from .config import SystemConfig, load_config

__all__ = ["SystemConfig", "load_config"]
