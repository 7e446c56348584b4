"""Desk-scale articulation toolkit."""
