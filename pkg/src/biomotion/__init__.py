"""Biomechanically guided motion refinement on a numpy core.

Submodules: ``motion`` (containers and files), ``kinematics`` (derivatives),
``metrics`` (plausibility scores), ``dynamics`` (learned equation-of-motion
terms), ``diffusion`` (denoiser, samplers, inversion), ``training``,
``sim`` (synthetic corpora), ``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
