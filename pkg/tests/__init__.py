"""Tests for the choreo skill-discovery agent."""
