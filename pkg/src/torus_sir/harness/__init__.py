"""Experiment orchestration: configuration, pipelines, Fortet distance and the CLI."""
