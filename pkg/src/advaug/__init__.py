"""Adversarially augmented training: a classifier trained together with a
discriminator on its hidden features so that adversarial inputs map to the
same representation as clean ones."""

__version__ = "0.1.0"
