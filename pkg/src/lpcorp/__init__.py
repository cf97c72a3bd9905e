"""Two-stage rare-event prediction: a reasoning oracle's conclusions, selectively
flipped by a correctness classifier, plus the accuracy and cost algebra used to
choose the flip threshold."""

__version__ = "0.1.0"
