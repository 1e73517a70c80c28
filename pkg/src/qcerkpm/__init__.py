"""Quasi-conforming embedded reproducing kernel solver for heterogeneous elasticity."""
