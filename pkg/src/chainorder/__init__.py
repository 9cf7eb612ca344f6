"""Samplers for unnormalized densities and a lab for their covariance ordering."""
