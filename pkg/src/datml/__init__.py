"""datml: few-shot domain adaptation for task-oriented dialogue generation.

Discrete latent dialogue codes (DI-VAE / DI-VST) feed a hierarchical
encoder-decoder with copy attention; source domains are trained with Reptile
(or first-order MAML / plain multi-task) and adapted to a held-out domain
from a handful of dialogues.
"""

__version__ = "0.1.0"
