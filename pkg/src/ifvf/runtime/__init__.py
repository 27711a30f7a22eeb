"""Scenario loading, the multi-rate scheduler, logs, metrics and the CLI."""
