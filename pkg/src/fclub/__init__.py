"""Federated online clustering of linear bandits.

Simulation framework for phase-based cluster-of-bandits algorithms run
across several local servers that synchronize sufficient statistics
through a global server, optionally releasing those statistics through a
tree-based differentially private mechanism.
"""

__version__ = "0.1.0"
