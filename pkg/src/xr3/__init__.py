"""Human-to-robot retargeting engine, session relay, and interaction
analysis, runnable entirely against simulated device traces."""

__version__ = "0.1.0"
