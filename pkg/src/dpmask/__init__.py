"""Differentially private training, adversarial attacks, and gradient-masking audits."""

__version__ = "0.1.0"
