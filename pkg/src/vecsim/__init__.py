"""Round-based simulator of cooperative content caching at a roadside unit.

Pipeline per round: vehicle population update -> per-vehicle radio links ->
content requests -> (for learning schemes) asynchronous federated training of
a rating autoencoder -> popular-content prediction -> dueling-DQN cooperative
cache placement -> request serving and metrics. Everything is seeded and
deterministic.
"""

from vecsim.harness import ExperimentConfig, run_experiment

__all__ = ["ExperimentConfig", "run_experiment"]
__version__ = "0.1.0"
