"""Command line, checkpoints, metrics and the synthetic corpus."""
