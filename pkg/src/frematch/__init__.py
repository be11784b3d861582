"""Desk-scale semi-supervised learning lab: a dual-model trainer with a
feature-space renormalization penalty and confidence-gated pseudo-labels,
plus the property oracles that keep every piece honest."""

__version__ = "0.1.0"
