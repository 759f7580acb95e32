"""Lumped dynamic model of two ammonia synthesis loops.

Loop A: feed -> K-101 -> mixer -> K-102 -> heater -> reactor -> cooler -> flash,
flash vapour -> purge -> mixer.  Loop B: feed -> K-101 -> mixer -> cooler ->
flash, flash vapour -> K-102 -> heater -> reactor -> purge -> mixer.

Material is held in exactly two places, the loop gas inventory at the mixer
and the liquid in the flash drum; every other unit is algebraic in
composition, with first-order lags on temperatures, pressures and valve
positions only.  One explicit Euler step therefore conserves N and H atoms to
round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..flowgraph import Edge, FlowsheetTopology, Node, SensorBinding, SensorKind, UnitKind, check_topology
from .constants import ATOMS, DEFAULT_CONSTANTS, MOLAR_MASS, PlantConstants
from .pid import PIDController, bumpless, pid_step

VARIANTS = ("A", "B")
CONTROLLERS = ("FC-1", "FC-2", "LC-1", "TC-1")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StreamState:
    molar_flow: np.ndarray  # mol/s of N2, H2, NH3
    temperature: float
    pressure: float

    @property
    def total(self) -> float:
        return float(self.molar_flow.sum())

    def scaled(self, frac: float) -> "StreamState":
        return StreamState(self.molar_flow * frac, self.temperature, self.pressure)


def nh3_mass_fraction(moles: np.ndarray) -> float:
    mass = moles * MOLAR_MASS
    total = mass.sum()
    return float(mass[2] / total) if total > 0 else 0.0


@dataclass(frozen=True)
class ProcessState:
    time: float
    mixer_holdup: np.ndarray  # mol per species, loop gas inventory
    mixer_T: float
    flash_holdup: np.ndarray  # mol per species, liquid
    flash_T: float
    feed_valve_flow: float  # mol/s delivered by the FC-1 valve
    purge_split: float  # fraction of purge-splitter inflow sent to purge
    product_valve: float  # LC-1 valve opening 0..1
    heater_duty: float  # kW
    heater_T: float  # heater outlet temperature (lagged)
    cooler_T: float
    catalyst_T: tuple[float, ...]
    compressor_P: dict[str, float]
    controllers: dict[str, PIDController]
    streams: dict[str, StreamState] = field(default_factory=dict)
    node_values: dict[str, float] = field(default_factory=dict)

    def flash_level(self, k: PlantConstants = DEFAULT_CONSTANTS) -> float:
        return float(min(max(self.flash_holdup.sum() / k.flash_capacity, 0.0), 1.0))

    def product_flow(self, k: PlantConstants = DEFAULT_CONSTANTS) -> np.ndarray:
        """Liquid product (mol/s per species) leaving the drum this step."""
        return self.streams["liq"].molar_flow if "liq" in self.streams else np.zeros(3)


# -- topology -----------------------------------------------------------------------


def _nodes(order):
    kinds = {
        "FEED": UnitKind.FEED, "K-101": UnitKind.COMPRESSOR, "MIX": UnitKind.MIXER,
        "K-102": UnitKind.COMPRESSOR, "E-101": UnitKind.HEATER_COOLER, "R-101": UnitKind.REACTOR,
        "E-102": UnitKind.HEATER_COOLER, "V-101": UnitKind.FLASH_VESSEL,
        "PRODUCT": UnitKind.PRODUCT, "PURGE": UnitKind.PURGE_SPLITTER,
    }
    return tuple(Node(n, kinds[n]) for n in order)


# edge id -> (src, dst); the recycle stream "rec" closes the loop in both variants
_EDGES = {
    "A": [
        ("feed", "FEED", "K-101"), ("s2", "K-101", "MIX"), ("s3", "MIX", "K-102"),
        ("s4", "K-102", "E-101"), ("s5", "E-101", "R-101"), ("s6", "R-101", "E-102"),
        ("s7", "E-102", "V-101"), ("liq", "V-101", "PRODUCT"), ("vap", "V-101", "PURGE"),
        ("rec", "PURGE", "MIX"),
    ],
    "B": [
        ("feed", "FEED", "K-101"), ("s2", "K-101", "MIX"), ("s3", "MIX", "E-102"),
        ("s4", "E-102", "V-101"), ("liq", "V-101", "PRODUCT"), ("vap", "V-101", "K-102"),
        ("s7", "K-102", "E-101"), ("s8", "E-101", "R-101"), ("s9", "R-101", "PURGE"),
        ("rec", "PURGE", "MIX"),
    ],
}
_NODE_ORDER = {
    "A": ["FEED", "K-101", "MIX", "K-102", "E-101", "R-101", "E-102", "V-101", "PRODUCT", "PURGE"],
    "B": ["FEED", "K-101", "MIX", "E-102", "V-101", "PRODUCT", "K-102", "E-101", "R-101", "PURGE"],
}
REACTOR_INLET = {"A": "s5", "B": "s8"}
TARGET_SENSOR = "liq.X"
_KIND_CODE = {SensorKind.FLOW: "F", SensorKind.TEMPERATURE: "T", SensorKind.PRESSURE: "P",
              SensorKind.LEVEL: "L", SensorKind.COMPOSITION: "X", SensorKind.DUTY: "Q",
              SensorKind.POWER: "W"}


def _sid(loc, kind):
    return f"{loc}.{_KIND_CODE[kind]}"


def process_topology(variant: str) -> FlowsheetTopology:
    """Flowsheet graph and sensor placement of loop ``variant``.

    Every stream carries flow, temperature and pressure sensors; the drum has a
    level sensor, heat exchangers report duty, compressors report power and the
    purge splitter reports purge flow.  The product-stream analyser is the
    soft-sensor target and is not an input.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown process variant {variant!r}; expected one of {VARIANTS}")
    edges = tuple(Edge(e, s, d) for e, s, d in _EDGES[variant])
    sensors = []
    for e in edges:
        for kind in (SensorKind.FLOW, SensorKind.TEMPERATURE, SensorKind.PRESSURE):
            sensors.append(SensorBinding(_sid(e.edge_id, kind), e.edge_id, kind))
    sensors += [
        SensorBinding(_sid("V-101", SensorKind.LEVEL), "V-101", SensorKind.LEVEL),
        SensorBinding(_sid("E-101", SensorKind.DUTY), "E-101", SensorKind.DUTY),
        SensorBinding(_sid("E-102", SensorKind.DUTY), "E-102", SensorKind.DUTY),
        SensorBinding(_sid("K-101", SensorKind.POWER), "K-101", SensorKind.POWER),
        SensorBinding(_sid("K-102", SensorKind.POWER), "K-102", SensorKind.POWER),
        SensorBinding(_sid("PURGE", SensorKind.FLOW), "PURGE", SensorKind.FLOW),
        SensorBinding(TARGET_SENSOR, "liq", SensorKind.COMPOSITION),
    ]
    return check_topology(
        FlowsheetTopology(f"ammonia-loop-{variant}", _nodes(_NODE_ORDER[variant]), edges, tuple(sensors), TARGET_SENSOR)
    )


# -- controllers --------------------------------------------------------------------


def default_controllers(k: PlantConstants = DEFAULT_CONSTANTS) -> dict[str, PIDController]:
    """The four loops: feed flow, purge flow, drum level, reactor inlet temperature."""

    def make(gains, sp, lo, hi, bias):
        return PIDController(*gains, setpoint=sp, output_min=lo, output_max=hi, bias=bias)

    return {
        "FC-1": make(k.fc1_gains, k.sp_feed, 0.0, 1.0, k.sp_feed / k.feed_flow_max),
        "FC-2": make(k.fc2_gains, k.sp_purge, 0.0, k.purge_split_max, 0.02),
        "LC-1": make(k.lc1_gains, k.sp_level, 0.0, 1.0, 0.45),
        "TC-1": make(k.tc1_gains, k.sp_reactor_T, 0.0, k.heater_duty_max, 4000.0),
    }


def controlled_variables(variant: str, s: ProcessState, k: PlantConstants = DEFAULT_CONSTANTS) -> dict[str, float]:
    """Current measurement of each loop's controlled variable."""
    return {
        "FC-1": s.feed_valve_flow,
        "FC-2": s.node_values.get("PURGE.F", 0.0),
        "LC-1": s.flash_level(k),
        "TC-1": s.heater_T,
    }


# -- unit models --------------------------------------------------------------------


def _lag(x, target, tau, dt):
    return x + (target - x) * min(1.0, dt / tau)


def _compress(inlet: StreamState, P_state: float, ratio0: float, design: float, k: PlantConstants):
    F = inlet.total
    ratio = ratio0 * (1.0 - k.head_slope * (F / design - 1.0))
    ratio = min(max(ratio, 1.05), 2.0 * ratio0)
    P_out = P_state
    r_eff = max(P_out / inlet.pressure, 1.0) if inlet.pressure > 0 else 1.0
    T_out = inlet.temperature * r_eff**k.kappa
    power = F * k.cp * (T_out - inlet.temperature) / k.compressor_efficiency / 1000.0
    return StreamState(inlet.molar_flow, T_out, P_out), inlet.pressure * ratio, power


def _bed_conversion(T: float, P: float, k: PlantConstants) -> float:
    sig = 1.0 / (1.0 + math.exp(-k.x_slope * (T - k.x_T_ref)))
    x = k.x_max * sig * (max(P, 0.0) / k.x_P_ref) ** k.x_P_exp
    cap = 0.95 / (1.0 + math.exp((T - k.eq_T) / k.eq_width))
    return min(max(x, 0.0), cap)


def _reactor(inlet: StreamState, cat_T, k: PlantConstants):
    """Three adiabatic beds with interbed cooling; returns outlet and bed inlet temperatures."""
    n = inlet.molar_flow.copy()
    T1 = inlet.temperature
    T_in = T1
    bed_inlets = []
    P = inlet.pressure * (1.0 - k.dp_frac)
    for b in range(k.n_beds):
        bed_inlets.append(T_in)
        X = _bed_conversion(cat_T[b], inlet.pressure, k)
        xi = X * min(n[0], n[1] / 3.0)
        n = n + xi * np.array([-1.0, -3.0, 2.0])
        F = n.sum()
        T_out = T_in + (2.0 * xi * k.dH_per_NH3 / (F * k.cp) if F > 0 else 0.0)
        T_in = T1 + k.interbed_quench * (T_out - T1)
    return StreamState(np.maximum(n, 0.0), T_out, P), bed_inlets


def flash_split(inlet: StreamState, k: PlantConstants = DEFAULT_CONSTANTS) -> tuple[np.ndarray, StreamState]:
    """Liquid molar flows condensed into the drum and the vapour stream leaving it."""
    lam = min(max(k.flash_c0 - k.flash_c1 * (inlet.temperature - k.flash_T_ref), 0.0), 1.0)
    liquid = inlet.molar_flow * np.array([k.solubility[0], k.solubility[1], lam])
    return liquid, StreamState(inlet.molar_flow - liquid, inlet.temperature, inlet.pressure)


def _mix_T(a: StreamState, b: StreamState) -> float:
    fa, fb = a.total, b.total
    if fa + fb <= 0:
        return 0.5 * (a.temperature + b.temperature)
    return (fa * a.temperature + fb * b.temperature) / (fa + fb)


# -- process --------------------------------------------------------------------------


def _check_finite(s: ProcessState):
    scalars = {
        "mixer_T": s.mixer_T, "flash_T": s.flash_T, "feed_valve_flow": s.feed_valve_flow,
        "purge_split": s.purge_split, "product_valve": s.product_valve, "heater_duty": s.heater_duty,
        "heater_T": s.heater_T, "cooler_T": s.cooler_T,
    }
    for name, v in scalars.items():
        if not math.isfinite(v):
            raise SimulationError(f"non-finite state variable {name} at t={s.time:.1f} s")
    for name, arr in (("mixer_holdup", s.mixer_holdup), ("flash_holdup", s.flash_holdup)):
        if not np.all(np.isfinite(arr)):
            raise SimulationError(f"non-finite state variable {name} at t={s.time:.1f} s")


def step_process(variant: str, s: ProcessState, dt: float, k: PlantConstants = DEFAULT_CONSTANTS) -> ProcessState:
    """Advance the loop by one explicit step of ``dt`` seconds."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown process variant {variant!r}")
    _check_finite(s)
    ctl = dict(s.controllers)
    cv = controlled_variables(variant, s, k)

    # controllers act on the measurements at the start of the step
    u_feed, ctl["FC-1"] = pid_step(ctl["FC-1"], cv["FC-1"], dt)
    u_purge, ctl["FC-2"] = pid_step(ctl["FC-2"], cv["FC-2"], dt)
    u_level, ctl["LC-1"] = pid_step(ctl["LC-1"], cv["LC-1"], dt)
    duty, ctl["TC-1"] = pid_step(ctl["TC-1"], cv["TC-1"], dt)

    feed_flow = max(_lag(s.feed_valve_flow, u_feed * k.feed_flow_max, k.valve_tau, dt), 0.0)
    split = min(max(_lag(s.purge_split, u_purge, k.valve_tau, dt), 0.0), k.purge_split_max)
    valve = min(max(_lag(s.product_valve, u_level, k.valve_tau, dt), 0.0), 1.0)

    streams: dict[str, StreamState] = {}
    nodes: dict[str, float] = {}
    P_next = dict(s.compressor_P)

    feed = StreamState(feed_flow * np.asarray(k.feed_composition), k.feed_T, k.feed_P)
    streams["feed"] = feed
    s2, P_next["K-101"], nodes["K-101.W"] = _compress(feed, s.compressor_P["K-101"], k.k101_ratio, k.k101_design_flow, k)
    streams["s2"] = s2

    mixer_P = k.mixer_P_ref * s.mixer_holdup.sum() / k.mixer_inventory_ref
    mixer_out = StreamState(s.mixer_holdup / k.mixer_tau, s.mixer_T, mixer_P)

    def heater(inlet):
        F = inlet.total
        target = inlet.temperature + (duty * 1000.0 / (F * k.cp) if F > 0 else 0.0)
        T = _lag(s.heater_T, target, k.heater_tau, dt)
        nodes["E-101.Q"] = duty
        return StreamState(inlet.molar_flow, T, inlet.pressure * (1.0 - k.dp_frac)), T

    def cooler(inlet):
        target = k.cooler_T_coolant + (1.0 - k.cooler_effectiveness) * (inlet.temperature - k.cooler_T_coolant)
        T = _lag(s.cooler_T, target, k.cooler_tau, dt)
        nodes["E-102.Q"] = inlet.total * k.cp * (T - inlet.temperature) / 1000.0
        return StreamState(inlet.molar_flow, T, inlet.pressure * (1.0 - k.dp_frac)), T

    def purge(inlet):
        purge_flow = inlet.molar_flow * split
        nodes["PURGE.F"] = float(purge_flow.sum())
        streams["purge"] = StreamState(purge_flow, inlet.temperature, inlet.pressure)
        return purge_flow, StreamState(inlet.molar_flow - purge_flow, inlet.temperature, inlet.pressure)

    cat_targets: list[float]
    if variant == "A":
        streams["s3"] = mixer_out
        s4, P_next["K-102"], nodes["K-102.W"] = _compress(mixer_out, s.compressor_P["K-102"], k.k102_ratio, k.k102_design_flow, k)
        streams["s4"] = s4
        streams["s5"], heater_T = heater(s4)
        streams["s6"], cat_targets = _reactor(streams["s5"], s.catalyst_T, k)
        streams["s7"], cooler_T = cooler(streams["s6"])
        liquid_in, streams["vap"] = flash_split(streams["s7"], k)
        purge_flow, streams["rec"] = purge(streams["vap"])
        flash_inlet = streams["s7"]
    else:
        streams["s3"] = mixer_out
        streams["s4"], cooler_T = cooler(mixer_out)
        liquid_in, streams["vap"] = flash_split(streams["s4"], k)
        s7, P_next["K-102"], nodes["K-102.W"] = _compress(streams["vap"], s.compressor_P["K-102"], k.k102_ratio, k.k102_design_flow, k)
        streams["s7"] = s7
        streams["s8"], heater_T = heater(s7)
        streams["s9"], cat_targets = _reactor(streams["s8"], s.catalyst_T, k)
        purge_flow, streams["rec"] = purge(streams["s9"])
        flash_inlet = streams["s4"]

    # liquid product drawn from the drum holdup
    held = s.flash_holdup.sum()
    draw = min(valve * k.product_flow_max, held / dt) if held > 0 else 0.0
    product = s.flash_holdup * (draw / held) if held > 0 else np.zeros(3)
    streams["liq"] = StreamState(product, s.flash_T, flash_inlet.pressure)

    # holdup balances
    mix_in = streams["s2"].molar_flow + streams["rec"].molar_flow
    mixer_holdup = np.maximum(s.mixer_holdup + dt * (mix_in - mixer_out.molar_flow), 0.0)
    n_old, n_new = s.mixer_holdup.sum(), mixer_holdup.sum()
    if n_new > 0:
        energy = n_old * s.mixer_T + dt * (
            streams["s2"].total * streams["s2"].temperature + streams["rec"].total * streams["rec"].temperature
            - mixer_out.total * s.mixer_T
        )
        mixer_T = energy / n_new
    else:
        mixer_T = s.mixer_T
    flash_holdup = np.maximum(s.flash_holdup + dt * (liquid_in - product), 0.0)
    h_old, h_new = held, flash_holdup.sum()
    flash_T = (
        (h_old * s.flash_T + dt * (liquid_in.sum() * flash_inlet.temperature - product.sum() * s.flash_T)) / h_new
        if h_new > 0 else flash_inlet.temperature
    )

    P_next = {name: _lag(s.compressor_P[name], P_next[name], k.pressure_tau, dt) for name in P_next}
    catalyst_T = tuple(_lag(Tc, Tt, k.catalyst_tau, dt) for Tc, Tt in zip(s.catalyst_T, cat_targets))

    out = ProcessState(
        time=s.time + dt,
        mixer_holdup=mixer_holdup,
        mixer_T=mixer_T,
        flash_holdup=flash_holdup,
        flash_T=flash_T,
        feed_valve_flow=feed_flow,
        purge_split=split,
        product_valve=valve,
        heater_duty=duty,
        heater_T=heater_T,
        cooler_T=cooler_T,
        catalyst_T=catalyst_T,
        compressor_P=P_next,
        controllers=ctl,
        streams=streams,
        node_values=nodes,
    )
    _check_finite(out)
    return out


def default_process(variant: str, k: PlantConstants = DEFAULT_CONSTANTS):
    """Topology, an initial state near the nominal operating point, and the four controllers.

    The state is a cold guess; :func:`settle` drives it to steady state.
    """
    topo = process_topology(variant)
    ctl = default_controllers(k)
    ctl = {name: bumpless(c, c.bias) for name, c in ctl.items()}
    loop_flow = k.k102_design_flow
    z = np.array([0.22, 0.66, 0.12])
    state = ProcessState(
        time=0.0,
        mixer_holdup=loop_flow * k.mixer_tau * z,
        mixer_T=320.0,
        flash_holdup=k.sp_level * k.flash_capacity * np.array([0.005, 0.01, 0.985]),
        flash_T=k.flash_T_ref,
        feed_valve_flow=k.sp_feed,
        purge_split=0.02,
        product_valve=0.45,
        heater_duty=4000.0,
        heater_T=k.sp_reactor_T,
        cooler_T=k.flash_T_ref,
        catalyst_T=(k.sp_reactor_T,) * k.n_beds,
        compressor_P={"K-101": k.feed_P * k.k101_ratio, "K-102": k.feed_P * k.k101_ratio * k.k102_ratio},
        controllers=ctl,
    )
    return topo, state, ctl


def read_sensors(topology: FlowsheetTopology, s: ProcessState, k: PlantConstants = DEFAULT_CONSTANTS) -> dict[str, float]:
    """Input-sensor readings for the current state (target analyser excluded)."""
    readings = {}
    for b in topology.input_sensors:
        if b.location in s.streams:
            st = s.streams[b.location]
            val = {SensorKind.FLOW: st.total, SensorKind.TEMPERATURE: st.temperature,
                   SensorKind.PRESSURE: st.pressure}[b.kind]
        elif b.kind == SensorKind.LEVEL:
            val = s.flash_level(k)
        else:
            val = s.node_values[b.sensor_id]
        readings[b.sensor_id] = float(val)
    return readings


def product_target(s: ProcessState) -> float:
    """NH3 mass fraction of the liquid product (drum contents)."""
    return nh3_mass_fraction(s.flash_holdup)


def atom_inventory(s: ProcessState) -> np.ndarray:
    """Moles of N and H atoms held in the mixer inventory and the drum."""
    return ATOMS @ (s.mixer_holdup + s.flash_holdup)


def atom_flows(s: ProcessState) -> dict[str, np.ndarray]:
    """N and H atom flows (mol/s) of feed, product and purge during the last step."""
    return {name: ATOMS @ s.streams[key].molar_flow for name, key in
            (("feed", "feed"), ("product", "liq"), ("purge", "purge"))}
