"""
cloud-sync - Self-Triggered Synchronization Through a Shared Repository

Offline design of the synchronizing controller, exact closed-loop simulation
of agents that only meet through cloud records, and runtime checks of the
design guarantees.
"""

__version__ = "0.1.0"
