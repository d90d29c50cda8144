"""Gaussian reverse water-filling over a variance spectrum.

Given variances lambda_1 >= ... >= lambda_d and a rate budget R in bits, a
unique water level D* solves sum_j (1/2) log2+(lambda_j / D*) = R. Modes with
lambda_j > D* are "active" and transmitted through a coordinatewise Gaussian
channel with per-mode distortion D_j = min(lambda_j, D*), gain
c_j = 1 - D_j/lambda_j, and noise variance tau_j^2 = c_j * D*. Modes at or
below the water level are dropped (strict inequality defines the active set).

The solver uses closed-form active-set enumeration: for each prefix length k
the candidate level is D*_k = (prod_{i<=k} lambda_i)^(1/k) * 2^(-2R/k), and
the accepted k is the largest one with lambda_k > D*_k. Geometric means are
taken in log space so large d and extreme rates do not overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import Spectrum

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class RDChannel:
    """Solved reverse water-filling channel for one spectrum and rate."""

    water_level: float
    distortions: np.ndarray = field(repr=False)  # D_j
    gains: np.ndarray = field(repr=False)        # c_j in [0, 1)
    noise_vars: np.ndarray = field(repr=False)   # tau_j^2
    active_set: np.ndarray = field(repr=False)   # indices with lambda_j > D*
    rate_bits: float = 0.0

    @property
    def active_count(self) -> int:
        return int(self.active_set.size)

    @property
    def total_distortion(self) -> float:
        return float(np.sum(self.distortions))

    def per_mode(self):
        """Iterate (D_j, c_j, tau_j^2) records in mode order."""
        return list(zip(self.distortions, self.gains, self.noise_vars))


def solve_level_sorted(values_desc: np.ndarray, rate_bits: float) -> tuple[float, int]:
    """Water level and active count for a descending nonnegative array.

    Returns (D*, k). k = 0 with D* = values[0] when no mode clears the level
    (rate 0, or an all-zero array, where D* = 0).
    """
    positive = values_desc[values_desc > 0.0]
    m = positive.size
    if m == 0:
        return 0.0, 0
    logs = np.log(positive)
    k = np.arange(1, m + 1, dtype=float)
    log_candidates = (np.cumsum(logs) - 2.0 * rate_bits * _LN2) / k
    valid = logs > log_candidates
    if not valid.any():
        return float(values_desc[0]), 0
    kstar = int(np.nonzero(valid)[0][-1]) + 1
    return float(np.exp(log_candidates[kstar - 1])), kstar


def solve_level_sorted_batch(values_desc: np.ndarray, rate_bits: float):
    """Vectorized `solve_level_sorted` over rows of a (batch, d) array."""
    vals = values_desc
    pos = vals > 0.0
    logs = np.where(pos, np.log(np.where(pos, vals, 1.0)), 0.0)
    k = np.arange(1, vals.shape[1] + 1, dtype=float)
    log_candidates = (np.cumsum(logs, axis=1) - 2.0 * rate_bits * _LN2) / k
    valid = (logs > log_candidates) & pos
    any_valid = valid.any(axis=1)
    last_true = vals.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    kstar = np.where(any_valid, last_true + 1, 0)
    dstar = np.where(
        any_valid,
        np.exp(log_candidates[np.arange(vals.shape[0]), np.maximum(last_true, 0)]),
        vals[:, 0],
    )
    return dstar, kstar


def channel_params(lambda_j: float, water_level: float) -> tuple[float, float, float]:
    """Per-mode (D_j, c_j, tau_j^2) for a single variance and water level."""
    if lambda_j < 0 or water_level < 0:
        raise ValueError("variance and water level must be nonnegative")
    if lambda_j <= water_level:
        return float(lambda_j), 0.0, 0.0
    c = 1.0 - water_level / lambda_j
    return float(water_level), float(c), float(c * water_level)


def solve_water_level(spectrum: Spectrum, rate_bits: float) -> RDChannel:
    """Solve the reverse water-filling problem for `spectrum` at `rate_bits`."""
    if rate_bits < 0:
        raise ValueError(f"rate must be nonnegative, got {rate_bits}")
    values = spectrum.values
    if not np.any(values > 0):
        raise ValueError("water-filling is undefined for an all-zero spectrum")
    dstar, _ = solve_level_sorted(values, rate_bits)
    distortions = np.minimum(values, dstar)
    active = values > dstar
    gains = np.zeros_like(values)
    gains[active] = 1.0 - dstar / values[active]
    noise_vars = gains * dstar
    return RDChannel(
        water_level=dstar,
        distortions=distortions,
        gains=gains,
        noise_vars=noise_vars,
        active_set=np.nonzero(active)[0],
        rate_bits=float(rate_bits),
    )


def shannon_distortion(spectrum: Spectrum, rate_bits: float) -> float:
    """Minimum achievable total MSE at the given rate: sum_j D_j."""
    return solve_water_level(spectrum, rate_bits).total_distortion


def water_level_log_derivative(channel: RDChannel, u, u_dot) -> float:
    """Instantaneous d(log D*)/dt = (2/k) * sum_{i in A} u_dot_i / u_i.

    `u` and `u_dot` are the diagonal encoder weights and their time
    derivatives; only entries on the active set contribute.
    """
    u = np.asarray(u, dtype=float)
    u_dot = np.asarray(u_dot, dtype=float)
    active = channel.active_set
    if active.size == 0:
        raise ValueError("water level derivative needs a nonempty active set")
    if np.any(u[active] == 0.0):
        raise ValueError("zero encoder weight on an active mode")
    return float(2.0 / active.size * np.sum(u_dot[active] / u[active]))
