"""Recovery experiments: phase diagrams, threshold search, noise sweeps and the CLI."""
