"""Wasserstein-2 regularized training of multi-class classifiers against group TPR gaps."""

__version__ = "0.1.0"
