from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PIDController:
    """Positional PID with output clamping and conditional integration.

    Error is ``setpoint - measurement``; reverse-acting loops use negative gains.
    The derivative acts on the measurement, so setpoint steps do not kick.
    """

    gain_p: float
    gain_i: float = 0.0
    gain_d: float = 0.0
    setpoint: float = 0.0
    output_min: float = float("-inf")
    output_max: float = float("inf")
    bias: float = 0.0
    integral_state: float = 0.0
    last_measurement: float | None = None


def pid_step(c: PIDController, measurement: float, dt: float) -> tuple[float, PIDController]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = c.setpoint - measurement
    d_meas = 0.0 if c.last_measurement is None else (measurement - c.last_measurement) / dt
    integral = c.integral_state + e * dt
    raw = c.bias + c.gain_p * e + c.gain_i * integral - c.gain_d * d_meas
    out = min(max(raw, c.output_min), c.output_max)
    # freeze the integral while saturated and the error pushes further into the limit
    push = c.gain_i * e
    if (raw > c.output_max and push >= 0) or (raw < c.output_min and push <= 0):
        integral = c.integral_state
        raw = c.bias + c.gain_p * e + c.gain_i * integral - c.gain_d * d_meas
        out = min(max(raw, c.output_min), c.output_max)
    return out, replace(c, integral_state=integral, last_measurement=measurement)


def bumpless(c: PIDController, output: float) -> PIDController:
    """Re-seat the integral so the controller currently outputs ``output`` at zero error."""
    if c.gain_i == 0:
        return replace(c, bias=output, integral_state=0.0)
    return replace(c, integral_state=(output - c.bias) / c.gain_i)
