"""Experiment drivers, configuration and command-line entry point."""
