"""Test package for the LTM scaling lab."""
