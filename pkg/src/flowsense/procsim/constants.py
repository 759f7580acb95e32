"""Constants of the lumped ammonia-loop surrogate.

One table for both loop variants: the two plants share equipment and feed,
only the piping differs.  Units: mol/s, K, bar, kW, s.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

SPECIES = ("N2", "H2", "NH3")
MOLAR_MASS = np.array([28.0134, 2.01588, 17.0305])  # g/mol
# atoms per molecule, rows N and H
ATOMS = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 3.0]])


@dataclass(frozen=True)
class PlantConstants:
    # feed and FC-1 valve
    feed_composition: tuple[float, float, float] = (0.25, 0.75, 0.0)
    feed_T: float = 300.0
    feed_P: float = 20.0
    feed_flow_max: float = 150.0  # mol/s at full valve opening
    valve_tau: float = 10.0  # s, all control valves

    # gas properties
    cp: float = 35.0  # J/(mol K), one value for every mixture
    kappa: float = 0.2857  # (gamma - 1) / gamma for the isentropic-lite compressors
    compressor_efficiency: float = 0.75

    # compressors: ratio = r0 * (1 - head_slope * (F / F_design - 1)), outlet P lags
    k101_ratio: float = 5.0
    k101_design_flow: float = 100.0
    k102_ratio: float = 2.0
    k102_design_flow: float = 450.0
    head_slope: float = 0.15
    pressure_tau: float = 30.0

    # loop gas inventory held at the mixer: outflow = holdup / mixer_tau and
    # suction pressure = mixer_P_ref * holdup / mixer_inventory_ref
    mixer_tau: float = 90.0
    mixer_P_ref: float = 100.0
    mixer_inventory_ref: float = 26400.0

    # fired heater (TC-1 manipulates duty) and effluent cooler
    heater_tau: float = 30.0
    heater_duty_max: float = 12000.0  # kW
    cooler_T_coolant: float = 250.0
    cooler_effectiveness: float = 0.9
    cooler_tau: float = 60.0
    dp_frac: float = 0.01  # fractional pressure drop per heat exchanger / reactor

    # reactor: three beds, per-bed N2 conversion
    #   X = X_max * sigmoid(a (T - T_ref)) * (P / P_ref)^b, clipped to [0, 0.95 X_eq(T)]
    #   X_eq(T) = 1 / (1 + exp((T - T_eq) / w_eq))
    n_beds: int = 3
    x_max: float = 0.165
    x_slope: float = 0.01  # 1/K
    x_T_ref: float = 600.0
    x_P_ref: float = 200.0
    x_P_exp: float = 1.5
    eq_T: float = 800.0
    eq_width: float = 40.0
    dH_per_NH3: float = 46000.0  # J/mol released
    interbed_quench: float = 0.3  # next-bed inlet keeps this share of the temperature rise
    catalyst_tau: float = 120.0

    # flash: NH3 recovery lambda(T) = clip(c0 - c1 (T - T_ref), 0, 1); N2/H2 dissolve with eps
    flash_c0: float = 0.9
    flash_c1: float = 0.01
    flash_T_ref: float = 300.0
    solubility: tuple[float, float] = (0.01, 0.005)  # N2, H2
    flash_capacity: float = 30000.0  # mol of liquid at level 1
    product_flow_max: float = 100.0  # mol/s at full LC-1 valve opening

    # purge splitter (FC-2 manipulates the split fraction)
    purge_split_max: float = 0.5

    # nominal setpoints of the four loops
    sp_feed: float = 100.0  # FC-1, mol/s
    sp_purge: float = 5.0  # FC-2, mol/s
    sp_level: float = 0.5  # LC-1, fraction
    sp_reactor_T: float = 700.0  # TC-1, K

    # PI(D) tuning: (gain_p, gain_i, gain_d)
    fc1_gains: tuple[float, float, float] = (0.004, 0.0004, 0.0)
    fc2_gains: tuple[float, float, float] = (0.004, 0.0004, 0.0)
    lc1_gains: tuple[float, float, float] = (-4.0, -0.02, 0.0)
    tc1_gains: tuple[float, float, float] = (20.0, 1.0, 0.0)

    extra: dict = field(default_factory=dict)

    def as_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


DEFAULT_CONSTANTS = PlantConstants()
