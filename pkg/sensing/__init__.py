"""Subsampled random convolutions: operators, generators, analysis, recovery and certification."""
