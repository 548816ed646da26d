"""
Test suite for pwa-certifier.

This package contains unit tests, oracle and property tests, CLI tests and
shared fixtures for the closed-loop verification tools.
"""

__version__ = "1.0.0"
