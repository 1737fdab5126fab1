"""Inverse Ising inference with the erasure machine (eps-machine)."""
