"""Stochastic mirror descent for continuous dueling bandits."""
