"""Desk-scale laboratory for time-series transformer scaling laws."""
