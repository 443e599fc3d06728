"""Tests for parameter and preset modules."""
