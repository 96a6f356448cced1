"""Multi-energy microgrid dispatch with TD3 and C-LSGAN renewable scenarios."""

__version__ = "0.1.0"
