"""Robust visual self-modelling of a planar arm on a desk-scale synthetic
benchmark: corruption models, restoration filters, a fuzzy twin-SVM patch
classifier, a positional-encoding segmenter, silhouette pose fitting and the
metrics and harness that tie them together."""

__version__ = "0.1.0"
