"""Numerical laboratory for Mandelbrot multiplicative cascades and weighted tree sums."""
