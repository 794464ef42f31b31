"""latentlab: play inside a frozen generative decoder.

An interactive environment defined in a generator's latent space, an
entropy-seeking actor-critic explorer, a temporal-pair siamese
representation learner, and an evaluation harness for probe/coverage/
ablation studies — all on a small numpy core with exact gradients.
"""

__version__ = "0.1.0"
