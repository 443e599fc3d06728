"""Test package for lifeseq."""
