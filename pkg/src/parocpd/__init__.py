"""CP tensor decomposition by parallel rank-one updates."""
