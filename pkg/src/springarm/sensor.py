"""Inductive spring-sensor model.

A conductive spring in a resonant circuit reads out as a frequency; the
spring's inductance falls with length, so frequency rises with length. This
module maps both ways and applies the linear manufacturing-alignment
correction (slope beta, offset delta) that turns raw electrical lengths into
calibrated spring lengths.

Frequencies are Hz, capacitance F, lengths mm at the API boundary (converted
to meters internally).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

MU0 = 1.26e-6


@dataclass(frozen=True)
class SensorParams:
    """Resonant-circuit and alignment constants for one sensor channel.

    ``i_comp`` is kept verbatim from the vendor sheet, which quotes it in a
    capacitance unit (1000 pF) while calling it an inductance offset; it is
    used here as an H-equivalent value.
    """

    capacitance: float = 100e-12       # F
    i_comp: float = 1000e-12           # H-equivalent offset, see docstring
    mu_p: float = 1.0
    n_turns: int = 4
    spring_radius_mm: float = 2.0
    beta: float = 0.93
    delta: float = 2.45                # mm

    def __post_init__(self):
        if self.capacitance <= 0:
            raise DomainError("capacitance must be positive")
        if self.n_turns <= 0:
            raise DomainError("n_turns must be positive")
        if self.beta <= 0:
            raise DomainError("beta must be positive")

    @property
    def k_composite(self) -> float:
        """mu0 * mu_p * N^2 * pi * r^2 * C in SI (meters)."""
        r_m = self.spring_radius_mm * 1e-3
        return MU0 * self.mu_p * self.n_turns ** 2 * math.pi * r_m ** 2 * self.capacitance

    def frequency_band(self) -> tuple:
        """Open interval of frequencies with a positive length denominator."""
        if self.i_comp <= 0:
            return (0.0, math.inf)
        f_max = 1.0 / (2.0 * math.pi * math.sqrt(self.capacitance * self.i_comp))
        return (0.0, f_max)


def inductance_from_frequency(f: float, p: SensorParams) -> float:
    """Spring inductance implied by a resonant frequency.

    Valid for f > 0 up to (and including) the resonance-cancellation point
    where the implied inductance reaches zero.
    """
    if f <= 0:
        raise DomainError("frequency must be positive")
    ind = 1.0 / (p.capacitance * (2.0 * math.pi * f) ** 2) - p.i_comp
    if ind < -1e-18:
        raise DomainError("frequency outside valid sensor band")
    return ind


def frequency_to_length(f: float, p: SensorParams) -> float:
    """Raw (uncorrected) spring length in mm for a resonant frequency."""
    if f <= 0:
        raise DomainError("frequency must be positive")
    w2 = (2.0 * math.pi * f) ** 2
    denom = 1.0 - p.capacitance * p.i_comp * w2
    if denom <= 0:
        raise DomainError("frequency beyond sensor band")
    return 1e3 * p.k_composite * w2 / denom


def length_to_frequency(l_mm: float, p: SensorParams) -> float:
    """Exact algebraic inverse of :func:`frequency_to_length`."""
    if l_mm <= 0:
        raise DomainError("length must be positive")
    l_m = l_mm * 1e-3
    w2 = l_m / (p.k_composite + l_m * p.capacitance * p.i_comp)
    return math.sqrt(w2) / (2.0 * math.pi)


def f_map(f_sensor, p: SensorParams) -> np.ndarray:
    """Calibrated spring lengths (mm) for a vector of sensor frequencies."""
    f_sensor = np.atleast_1d(np.asarray(f_sensor, dtype=float))
    return np.array([p.beta * frequency_to_length(float(f), p) + p.delta
                     for f in f_sensor])


def f_map_inverse(lengths_mm, p: SensorParams) -> np.ndarray:
    """Sensor frequencies whose f_map equals the given calibrated lengths."""
    lengths_mm = np.atleast_1d(np.asarray(lengths_mm, dtype=float))
    return np.array([length_to_frequency((float(l) - p.delta) / p.beta, p)
                     for l in lengths_mm])


def action_band(p: SensorParams, spring_min_mm: float, spring_max_mm: float) -> tuple:
    """Frequency interval mapping onto [spring_min, spring_max] through f_map."""
    lo = f_map_inverse([spring_min_mm], p)[0]
    hi = f_map_inverse([spring_max_mm], p)[0]
    return (float(lo), float(hi))
