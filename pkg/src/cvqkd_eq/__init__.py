"""Pilot-assisted channel equalization for Gaussian-modulated coherent-state links.

Simulates fading fiber and free-space links with homodyne detection, trains
pilot-driven equalizers, classifies received quality, estimates transmittance
and excess noise, and evaluates asymptotic key rates.
"""

__version__ = "0.1.0"
