"""Numerical lab for Ricci flow coupled to the conjugate heat equation.

Discretized model geometries evolve under Ricci flow; positive solutions of
the conjugate heat equation are solved backward along the flow, and the
differential and integrated Harnack estimates, their supporting identities
and a localized variant are checked against calibrated tolerances.
"""

__version__ = "0.1.0"
