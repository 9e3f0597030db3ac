"""Averaged predictor feedback for switched linear systems with input delay.

Submodules: ``linalg`` (matrix exponential, pole placement, Lyapunov
equations), ``switching`` (dwell-time signals), ``plant`` (simulator),
``control`` (controllers and predictors), ``analysis`` (backstepping
transforms and stability certificates), ``scenario`` and ``cli``.
"""

__version__ = "0.1.0"
