"""Desk-scale control-room decision support.

A reduced-order chemical-plant surrogate with scripted fault scenarios,
an influence-diagram abnormality monitor, specialized reinforcement
learning recommenders gated by the diagram's decision intervals, a
GMM-HMM operator-failure predictor over process/alarm/HMI logs, the
coupling loop that orchestrates them, and the offline analytics
pipeline.
"""

__version__ = "0.1.0"
