"""Training loop, cross validation, ablation, inference and self checks."""
