"""Texture reconstruction from posed RGBD scans.

Pipeline: plane-based atlas generation, hard-assignment texture
initialization, FFT-based image alignment, and adversarial refinement,
with a synthetic-scene oracle harness and CLI.
"""

__version__ = "0.1.0"
