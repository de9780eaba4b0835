"""Exact stochastic simulation of quantum forward and reverse diffusion."""
