"""Electropermeabilization cell model and dynamical homogenization.

Single-cell transmission problem with Neu-Krassowska pore dynamics, its
reduction to a membrane ODE, periodic cell problems, effective tensors with a
memory kernel, and the sensitivity experiments built on them.
"""

__version__ = "0.1.0"
