"""Setpoint-perturbation campaigns sampled into flowsheet datasets."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..flowgraph import Dataset, SnapshotFrame
from ..rng import Xoshiro256
from .constants import DEFAULT_CONSTANTS, PlantConstants
from .plant import (
    CONTROLLERS,
    ProcessState,
    SimulationError,
    controlled_variables,
    default_process,
    product_target,
    read_sensors,
    step_process,
)


@dataclass(frozen=True)
class ScenarioConfig:
    duration_h: float = 80.0
    sample_interval: float = 36.0
    integration_step: float = 3.6
    perturbation_min: float = 0.01
    perturbation_max: float = 0.20
    steady_state_tolerance: float = 2e-4
    steady_state_hold: float = 900.0
    max_phase_h: float = 4.0
    warmup_h: float = 12.0
    seed: int = 0
    split_train: float = 0.8
    split_val: float = 0.1
    split_test: float = 0.1

    def __post_init__(self):
        ratio = self.sample_interval / self.integration_step
        if self.integration_step <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("sample_interval must be a positive integer multiple of integration_step")
        if not 0 <= self.perturbation_min <= self.perturbation_max:
            raise ValueError("need 0 <= perturbation_min <= perturbation_max")
        if self.duration_h <= 0 or self.steady_state_hold <= 0 or self.steady_state_tolerance <= 0:
            raise ValueError("duration, hold and tolerance must be positive")

    @property
    def substeps(self) -> int:
        return int(round(self.sample_interval / self.integration_step))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_h * 3600.0 / self.sample_interval))


def read_scenario_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Load ``key = value`` lines (no section header needed) into a config."""
    text = Path(path).read_text(encoding="utf-8")
    return scenario_config_from_mapping(_flat_kv(text), **overrides)


def _flat_kv(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string("[_]\n" + text)
    return dict(parser["_"])


def scenario_config_from_mapping(kv, **overrides) -> ScenarioConfig:
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    known = {}
    for key, raw in kv.items():
        if key not in types:
            continue
        known[key] = int(raw) if types[key] in ("int", int) else float(raw)
    known.update(overrides)
    return ScenarioConfig(**known)


def detect_steady_state(history: Sequence[Sequence[float]], times: Sequence[float], tol: float, hold: float) -> bool:
    """True iff every tracked variable stayed within ``tol`` (relative) of its trailing mean for ``hold`` seconds.

    ``history`` is a sequence of rows (one value per tracked variable) sampled at ``times``.
    """
    if len(times) == 0 or times[-1] - times[0] < hold:
        return False
    t = np.asarray(times, dtype=np.float64)
    window = np.asarray(history, dtype=np.float64)[t >= t[-1] - hold]
    centre = window.mean(axis=0)
    scale = np.maximum(np.abs(centre), 1e-12)
    return bool(np.all(np.abs(window - centre) <= tol * scale))


def _tracked(variant, s: ProcessState, k) -> list[float]:
    cv = controlled_variables(variant, s, k)
    return [cv[name] for name in CONTROLLERS] + [product_target(s)]


def advance(variant, s: ProcessState, dt: float, n: int, k=DEFAULT_CONSTANTS) -> ProcessState:
    for _ in range(n):
        s = step_process(variant, s, dt, k)
    return s


def settle(variant: str, s: ProcessState, cfg: ScenarioConfig, k: PlantConstants = DEFAULT_CONSTANTS,
           max_hours: float | None = None) -> tuple[ProcessState, bool]:
    """Run until :func:`detect_steady_state` fires (checked at every sample instant)."""
    limit = (cfg.max_phase_h if max_hours is None else max_hours) * 3600.0
    t0 = s.time
    times, rows = [], []
    hold_samples = int(np.ceil(cfg.steady_state_hold / cfg.sample_interval)) + 1
    while s.time - t0 < limit:
        s = advance(variant, s, cfg.integration_step, cfg.substeps, k)
        times.append(s.time)
        rows.append(_tracked(variant, s, k))
        times, rows = times[-hold_samples:], rows[-hold_samples:]
        if detect_steady_state(rows, times, cfg.steady_state_tolerance, cfg.steady_state_hold):
            return s, True
    return s, False


def initial_steady_state(variant: str, cfg: ScenarioConfig | None = None, k: PlantConstants = DEFAULT_CONSTANTS):
    """Topology and a settled state at nominal setpoints (warm-up, not recorded)."""
    cfg = cfg or ScenarioConfig()
    topo, s, _ = default_process(variant, k)
    s = advance(variant, s, cfg.integration_step, int(cfg.warmup_h * 3600 / cfg.integration_step), k)
    s, _ = settle(variant, s, cfg, k, max_hours=cfg.warmup_h)
    return topo, replace(s, time=0.0)


def _set_setpoint(s: ProcessState, name: str, value: float) -> ProcessState:
    ctl = dict(s.controllers)
    ctl[name] = replace(ctl[name], setpoint=value)
    return replace(s, controllers=ctl)


def run_scenario(variant: str, cfg: ScenarioConfig = ScenarioConfig(), k: PlantConstants = DEFAULT_CONSTANTS) -> Dataset:
    """Simulate a perturb / settle / revert / settle campaign and sample every sensor.

    One controller at a time gets its setpoint moved by a random signed fraction
    of its nominal value; once the plant is steady the setpoint goes back and the
    plant settles again.  Frames are taken every ``sample_interval`` seconds
    starting at t = 0 until ``duration_h`` is covered.
    """
    rng = Xoshiro256(cfg.seed)
    topo, s = initial_steady_state(variant, cfg, k)
    nominal = {name: c.setpoint for name, c in s.controllers.items()}
    n_frames = cfg.n_frames
    hold_samples = int(np.ceil(cfg.steady_state_hold / cfg.sample_interval)) + 1

    frames = []
    times, rows = [], []
    phase_start = 0.0
    perturbed: str | None = None
    events = []

    def record(state):
        frames.append(SnapshotFrame(round(state.time, 6), read_sensors(topo, state, k), product_target(state)))

    record(s)
    while len(frames) < n_frames:
        steady = detect_steady_state(rows, times, cfg.steady_state_tolerance, cfg.steady_state_hold)
        timed_out = s.time - phase_start >= cfg.max_phase_h * 3600.0
        if steady or timed_out or not events:
            if perturbed is None:
                name = CONTROLLERS[rng.randbelow(len(CONTROLLERS))]
                frac = rng.uniform(cfg.perturbation_min, cfg.perturbation_max)
                sign = -1.0 if rng.random() < 0.5 else 1.0
                s = _set_setpoint(s, name, nominal[name] * (1.0 + sign * frac))
                perturbed = name
                events.append((s.time, name, sign * frac))
            else:
                s = _set_setpoint(s, perturbed, nominal[perturbed])
                events.append((s.time, perturbed, 0.0))
                perturbed = None
            phase_start = s.time
            times, rows = [], []
        try:
            s = advance(variant, s, cfg.integration_step, cfg.substeps, k)
        except SimulationError as exc:
            raise SimulationError(f"simulation diverged near t={s.time:.1f} s: {exc}") from exc
        s = replace(s, time=round(s.time, 6))
        record(s)
        times.append(s.time)
        rows.append(_tracked(variant, s, k))
        times, rows = times[-hold_samples:], rows[-hold_samples:]

    meta = {
        "process": topo.name,
        "variant": variant,
        "sample_interval": cfg.sample_interval,
        "seed": cfg.seed,
        "n_setpoint_events": len(events),
    }
    return Dataset(topo, tuple(frames[:n_frames]), (cfg.split_train, cfg.split_val, cfg.split_test), meta)
