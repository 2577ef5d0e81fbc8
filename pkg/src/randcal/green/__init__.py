from .grids import Grid, bump_field, constant_field, field_from_function
from .operators import (
    AtomSampler,
    AveragedGreen,
    DiscreteGreen,
    FiniteModelSampler,
    assemble_green,
    averaged_green,
    jensen_green_check,
    rigidity_residual,
    second_order_identity_residual,
)
from .probes import ProbeConfig, FitConditioningError, fit_inverse_powers, probe_symbol
from .recover import (
    RecoveryConfig,
    conductivity_invariant_recover,
    finite_model_recover,
    obstruction_exhibit,
    recover_mean_variance,
    two_atom_pipeline,
    two_atom_recover,
)

__all__ = [
    "Grid", "bump_field", "constant_field", "field_from_function",
    "AtomSampler", "AveragedGreen", "DiscreteGreen", "FiniteModelSampler",
    "assemble_green", "averaged_green", "jensen_green_check",
    "rigidity_residual", "second_order_identity_residual",
    "ProbeConfig", "FitConditioningError", "fit_inverse_powers", "probe_symbol",
    "RecoveryConfig", "conductivity_invariant_recover", "finite_model_recover",
    "obstruction_exhibit", "recover_mean_variance", "two_atom_pipeline",
    "two_atom_recover",
]
