"""Cluster-randomized experiments under spatial interference."""

__version__ = "0.1.0"
