"""Deterministic 2D frontier-based navigation stack.

Modules: world (ground truth and sensing), mapping (belief and frontiers),
planning (paths, oracle labels, local control), policy (frontier-choice
policies and the external wire protocol), datagen (supervised dataset
factory), harness (episode runtime and SR/SPL benchmarks), cli.
"""

__version__ = "0.1.0"
