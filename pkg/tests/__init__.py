"""Tests for search-agent-lab."""
