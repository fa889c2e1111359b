"""Quadrotor state-estimation workbench.

Simulates a quadrotor's IMU/GPS/VO sensor suite under GPS false-data
injection, generates EKF innovation residues, detects attacks with classic
sequential detectors and a semi-supervised attention model, and demonstrates
resilient sensor fusion that drops spoofed GPS frames.
"""

__version__ = "0.1.0"
