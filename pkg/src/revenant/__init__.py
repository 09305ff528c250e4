"""revenant: forward-port old memory-safety vulnerabilities across project
history, find and revert the commits that killed them, and curate the
survivors into a benchmark."""

__version__ = "0.1.0"
