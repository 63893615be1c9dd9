"""Executable sublinear-expectation limit theorems."""
