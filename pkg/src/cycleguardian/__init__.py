"""Respiratory-cycle sound classifier: multi-channel spectrograms, grouped
feature encoding, deep embedding clustering, and group-mix contrastive
training, evaluated with the standard specificity/sensitivity score."""

__version__ = "0.1.0"
