"""Blocked, compressed full-state quantum circuit simulator."""
