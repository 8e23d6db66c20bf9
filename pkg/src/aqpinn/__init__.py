"""Attention-enhanced quantum physics-informed neural networks."""
