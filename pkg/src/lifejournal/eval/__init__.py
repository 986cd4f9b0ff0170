"""Evaluation: chrF, benchmark runner and the synthetic trace generator."""
