"""Magnetic self-touch sensing: dipole simulation, MagDelta trigger, contrastive encoder, few-shot classification."""

__version__ = "0.1.0"
