"""Pareto-optimal counterfactual generation for auditing image classifiers.

A conditional GAN renders an anchor image under perturbed attributes; NSGA-II
searches the perturbation box for the trade-off between plausibility,
adversarial power on the audited classifier, and change intensity.
"""

__version__ = "0.1.0"
