"""Adversarial CAPTCHA classifier simulator with a Stackelberg game analysis."""

__version__ = "0.1.0"
