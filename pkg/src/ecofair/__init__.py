"""Maritime fleet digital twin with online emission pricing, scheduled
fairness penalties, and two-tier macro/micro policies."""

__version__ = "0.1.0"
