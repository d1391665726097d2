"""Hypothesize-and-bound shape matching on Bernoulli fields."""

__version__ = "0.1.0"
