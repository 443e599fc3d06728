"""Tests for core modules."""
