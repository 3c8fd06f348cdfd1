"""Tests for the rlvm consolidation simulator."""
