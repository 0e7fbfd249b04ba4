"""Multi-agent policy transfer via learned task representations.

The package couples a seedable cooperative combat arena with a
population-invariant value-decomposition policy, a hypernetwork-generated
forward model for task-representation learning, and pipelines for multi-task
training, zero-shot transfer, adaptation, and fine-tuning.
"""

__version__ = "0.1.0"
