"""Bayes estimators of conditional distributions, densities and regression curves from the posterior predictive."""
