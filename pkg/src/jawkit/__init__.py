"""Jackknife+ intervals under covariate shift, influence-function LOO
approximations and error assessment."""

__version__ = "0.1.0"
