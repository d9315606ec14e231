"""Quantum trajectories of a continuously measured spin-oscillator.

Modules: ``model`` (parameters, spin algebra, adiabatic basis), ``sse`` (full
stochastic Schrodinger solver), ``gaussian`` (second-cumulant closure),
``classical`` (scaled equations of motion, sections), ``lyapunov``
(largest exponent by renormalisation), ``experiments`` and ``cli``.
"""

__version__ = "0.1.0"
