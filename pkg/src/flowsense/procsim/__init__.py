"""Lumped dynamic surrogate of an ammonia synthesis loop in two piping variants."""

from .constants import ATOMS, DEFAULT_CONSTANTS, MOLAR_MASS, SPECIES, PlantConstants
from .pid import PIDController, bumpless, pid_step
from .plant import (
    CONTROLLERS,
    TARGET_SENSOR,
    VARIANTS,
    ProcessState,
    SimulationError,
    StreamState,
    atom_flows,
    atom_inventory,
    controlled_variables,
    default_controllers,
    default_process,
    flash_split,
    process_topology,
    product_target,
    read_sensors,
    step_process,
)
from .scenario import (
    ScenarioConfig,
    advance,
    detect_steady_state,
    initial_steady_state,
    read_scenario_config,
    run_scenario,
    settle,
)
