"""Independent closed-form oracles used to freeze expected test values.

These stay deliberately naive and separate from the implementation paths
they check: the thermal oracle is pure arithmetic over the linear heating
model, the kinematic oracle is a per-tick accumulator.
"""

from __future__ import annotations

import math


def weld_peak_temp(init_temp: float, k_heat: float, current: float, pressure: float, duration: float) -> float:
    """Peak workpiece temperature for an uninterrupted weld of ``duration`` seconds."""
    return init_temp + k_heat * current * pressure * duration


def weld_breaches(
    init_temp: float, k_heat: float, current: float, pressure: float, duration: float, temp_max: float
) -> bool:
    return weld_peak_temp(init_temp, k_heat, current, pressure, duration) > temp_max


def ticks_to_breach(
    init_temp: float, k_heat: float, current: float, pressure: float, dt: float, temp_max: float
) -> int | None:
    """Heated ticks after weld start until the temperature first exceeds temp_max.

    None when the full-duration peak never crosses the bound. The first
    strictly-exceeding tick n satisfies init + n*step > temp_max.
    """
    step = k_heat * current * pressure * dt
    if step <= 0:
        return None
    n = math.floor((temp_max - init_temp) / step) + 1
    return max(n, 1)


def aborted_peak_temp(
    init_temp: float,
    k_heat: float,
    current: float,
    pressure: float,
    dt: float,
    duration: float,
    temp_max: float,
) -> float:
    """Expected simulated peak when a bound breach aborts the weld.

    The guard samples once per tick and stops heating on the tick after
    the first exceeding sample, so the peak is the first exceeding value
    itself; welds that never cross run to completion.
    """
    step = k_heat * current * pressure * dt
    n_total = round(duration / dt)
    n_cross = ticks_to_breach(init_temp, k_heat, current, pressure, dt, temp_max)
    if n_cross is None or n_cross >= n_total:
        return init_temp + step * n_total
    return init_temp + step * n_cross


def positions_by_accumulation(velocities: list[float], dt: float, start: float = 0.0) -> float:
    """Brute-force kinematics: fold per-tick velocity * dt increments."""
    position = start
    for v in velocities:
        position += v * dt
    return position


def expected_spacing(velocity: float, delay: float) -> float:
    """Steady-state spacing between consecutive chassis under constant V and inter-load delay d."""
    return velocity * delay
