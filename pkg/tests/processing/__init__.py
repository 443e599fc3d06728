"""Tests for processing modules."""
