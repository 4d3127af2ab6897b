"""Neural ODE control (NODEC) laboratory.

Trains small networks to emit open-loop controls for ODE systems and
compares them with minimum-energy optimal control (linear systems) and the
adjoint-gradient method (Kuramoto oscillators).
"""

__version__ = "0.1.0"
