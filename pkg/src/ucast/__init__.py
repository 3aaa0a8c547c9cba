"""Hierarchical latent-query forecasting with full-rank covariance
regularization, plus a VAR(1) laboratory with closed-form Bayes-risk oracles."""

__version__ = "0.1.0"
