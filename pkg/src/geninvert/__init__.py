"""Inversion of ReLU generative networks by layer-wise sparse recovery."""

from .model import (
    ActivationSpec,
    ForwardTrace,
    GeneratorNetwork,
    forward,
    load_network,
    make_rng,
    random_network,
    save_network,
)
from .analysis import SubsetBudget, certify_uniqueness
from .inversion import (
    GDConfig,
    InversionResult,
    Observation,
    RecoveryError,
    gradient_descent_invert,
    latent_pursuit,
    layered_basis_pursuit,
    oracle_bounds,
    oracle_end_to_end,
    oracle_layered,
)

__version__ = "0.1.0"
