"""System-level RAN load-balancing simulator with CIO-driven handover control,
a from-scratch PPO agent, A3/ReBuHa/CDQL baselines and an experiment CLI."""

__version__ = "0.1.0"
