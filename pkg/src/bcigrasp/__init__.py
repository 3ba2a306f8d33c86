"""Deterministic closed-loop simulator of an EEG-driven AR + robot grasping stack."""

__version__ = "0.1.0"
