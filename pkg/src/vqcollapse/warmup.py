"""Warm-up outcome prediction and the switch-point advisor.

Delaying quantization lets weak modes activate before the rate constraint can
freeze them. For a strictly decreasing spectrum and balanced init at scale
epsilon^2, the activation of mode j after warm-up time T is the closed-form
g_j(T), and the number of modes that can survive the switch to rate-R
quantized training is bounded by

    max { m : R > (1/2) sum_{i<m} log2( sigma_i^2 g_i(T) / (sigma_m^2 g_m(T)) ) },

with the converged reconstruction loss bounded below by water-filling the
top-m raw variances. The same water-filling count applies directly to any
measured latent spectrum, which is how the bound is used on real encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ae_flow import closed_form_activation
from .spectral import Spectrum
from .waterfill import solve_water_level

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class WarmupPrediction:
    """Predicted post-switch outcome for one (warm-up time, rate) pair."""

    max_surviving_modes: int
    loss_bound: float
    per_mode_distortion: float  # water-fill distortion of the top-m problem
    rate_bits: float
    warmup_time: float


@dataclass(frozen=True)
class SwitchAdvice:
    switch_time: float
    converged: bool


def predict_surviving_modes(spectrum: Spectrum, epsilon: float, warmup_time: float, rate_bits: float) -> int:
    """Largest m whose top-m warm latents all clear the rate-R water level.

    Requires a strictly decreasing spectrum; ties are rejected rather than
    perturbed, since silent perturbation shifts the count at boundaries.
    The sum is evaluated in log2 space with ascending index order.
    """
    values = spectrum.values
    if np.any(np.diff(values) >= 0):
        raise ValueError("prediction requires a strictly decreasing spectrum")
    if not 0.0 < epsilon * epsilon < 1.0:
        raise ValueError(f"epsilon^2 must lie in (0, 1), got epsilon={epsilon}")
    if warmup_time < 0:
        raise ValueError("warm-up time must be nonnegative")
    if rate_bits <= 0:
        raise ValueError("rate must be positive")
    g = closed_form_activation(values, epsilon * epsilon, warmup_time)
    log_lam = np.log2(values * g)
    prefix = np.concatenate([[0.0], np.cumsum(log_lam)])  # prefix[m] = sum_{i<=m}
    best = 1
    for m in range(1, spectrum.d + 1):
        half_sum = 0.5 * (prefix[m - 1] - (m - 1) * log_lam[m - 1])
        if rate_bits > half_sum:
            best = m
    return best


def loss_lower_bound(spectrum: Spectrum, m: int, rate_bits: float) -> float:
    """m * delta_m(R) + tail variance, with
    delta_m(R) = (prod_{i<=m} sigma_i^2)^(1/m) * 2^(-2R/m)."""
    if not 1 <= m <= spectrum.d:
        raise ValueError(f"m must lie in [1, {spectrum.d}], got {m}")
    values = spectrum.values
    if np.any(values[:m] <= 0):
        raise ValueError("the top-m variances must be positive")
    delta = float(np.exp2(np.mean(np.log2(values[:m])) - 2.0 * rate_bits / m))
    return m * delta + float(np.sum(values[m:]))


def predict_warmup(spectrum: Spectrum, epsilon: float, warmup_time: float, rate_bits: float) -> WarmupPrediction:
    """Bundle the surviving-mode bound and its loss bound for one grid point."""
    m = predict_surviving_modes(spectrum, epsilon, warmup_time, rate_bits)
    values = spectrum.values
    delta = float(np.exp2(np.mean(np.log2(values[:m])) - 2.0 * rate_bits / m))
    return WarmupPrediction(
        max_surviving_modes=m,
        loss_bound=m * delta + float(np.sum(values[m:])),
        per_mode_distortion=delta,
        rate_bits=float(rate_bits),
        warmup_time=float(warmup_time),
    )


def predict_from_spectrum(empirical: Spectrum, rate_bits: float) -> int:
    """Number of measured components strictly above the rate-R water level."""
    return solve_water_level(empirical, rate_bits).active_count


def advise_switch(times, values, patience: int, relative_tol: float) -> SwitchAdvice:
    """Earliest time whose next `patience` entries stay within `relative_tol`.

    Scans an ordered series of (time, level) pairs, e.g. effective dimension
    or predicted surviving modes against warm-up duration, and returns the
    start of the first plateau. If no plateau exists the last time is
    returned with converged=False.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.size == 0:
        raise ValueError("series is empty")
    if t.size != x.size:
        raise ValueError("times and values lengths differ")
    if patience < 1:
        raise ValueError("patience must be at least 1")
    if t.size < patience + 1:
        raise ValueError(f"series length {t.size} < patience + 1 = {patience + 1}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    for i in range(t.size - patience):
        window = x[i + 1 : i + 1 + patience]
        if np.all(np.abs(window - x[i]) <= relative_tol * abs(x[i])):
            return SwitchAdvice(switch_time=float(t[i]), converged=True)
    return SwitchAdvice(switch_time=float(t[-1]), converged=False)
