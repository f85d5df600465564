"""Desk-scale geospatial model kit.

Multi-modal tokenizers with uncertainty-aware Fourier encodings, a latent
cross-attention backbone with task heads, a token-count batch planner,
and a float64 reverse-mode numerics core that makes every piece
verifiable against independent oracles.
"""

import os

# Desk-scale matrices are too small for BLAS threading to pay off (measured
# ~1.5-2x slower multithreaded), and single-threaded kernels keep results
# reproducible. Only takes effect if numpy is not loaded yet; user settings win.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var, os

__version__ = "0.1.0"
