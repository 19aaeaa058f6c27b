"""Engineered-bath simulation for a transmon coupled to a lossy SNAIL mode."""

from ._bathforge import (
    PRESET_NAMES,
    DriveSpec,
    RateSet,
    SystemSpec,
    chemical_potential,
    design_pumps,
    evolve,
    fermi_dirac_populations,
    fit_rates_2level,
    fit_rates_3level,
    heating_population,
    parse_config,
    read_csv,
    run_config,
    run_preset,
    semiclassical_3level,
    steady_state,
    two_level_steady_state,
)

__all__ = [
    "PRESET_NAMES",
    "DriveSpec",
    "RateSet",
    "SystemSpec",
    "chemical_potential",
    "design_pumps",
    "evolve",
    "fermi_dirac_populations",
    "fit_rates_2level",
    "fit_rates_3level",
    "heating_population",
    "parse_config",
    "read_csv",
    "run_config",
    "run_preset",
    "semiclassical_3level",
    "steady_state",
    "two_level_steady_state",
]
