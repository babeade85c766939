"""Integration tests: MCP tools run against real corpora and small training runs."""
