"""Latent meso-structure texture fields: capture, synthesis and mapping."""

import warnings

# numba probes for TBB at import and warns when the system copy is old; the workqueue fallback is fine
warnings.filterwarnings("ignore", message="The TBB threading layer", module="numba")

__version__ = "0.1.0"
