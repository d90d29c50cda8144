"""Plain linear-autoencoder gradient flow on the diagonal manifold.

Each mode evolves independently under
    u_dot_j = 2 sigma_j^2 v_j (1 - u_j v_j),
    v_dot_j = 2 sigma_j^2 u_j (1 - u_j v_j),
so with balanced init u_j(0) = v_j(0) = sqrt(s) the activation
r_j(t) = u_j v_j follows a per-mode logistic in closed form and modes
saturate sequentially in decreasing variance order. This module provides the
numeric integrator, the closed form, and analytic warm-up checkpoints for
handing a partially trained state to the quantized flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .spectral import Spectrum, effective_dimension
from .trajectory import Trajectory

DIVERGENCE_LIMIT = 1e6


@dataclass
class DiagState:
    """Diagonal encoder/decoder weights plus the simulation clock."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).copy()
        self.v = np.asarray(self.v, dtype=float).copy()
        if self.u.shape != self.v.shape:
            raise ValueError(f"u and v shapes differ: {self.u.shape} vs {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state weights must be finite")


@dataclass(frozen=True)
class InitConfig:
    """Balanced initialization u_j(0) = v_j(0) = sqrt(scale), 0 < scale < 1."""

    scale: float

    def __post_init__(self):
        if not 0.0 < self.scale < 1.0:
            raise ValueError(f"init scale must lie in (0, 1), got {self.scale}")

    @property
    def epsilon(self) -> float:
        """Per-weight magnitude: epsilon^2 = scale."""
        return math.sqrt(self.scale)

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "InitConfig":
        return cls(scale=epsilon * epsilon)


def ae_derivatives(state: DiagState, spectrum: Spectrum):
    """Per-mode flow (u_dot, v_dot) of the unquantized reconstruction loss."""
    if state.u.size != spectrum.d:
        raise ValueError(f"state dimension {state.u.size} != spectrum dimension {spectrum.d}")
    s2 = spectrum.values
    gap = 1.0 - state.u * state.v
    return 2.0 * s2 * state.v * gap, 2.0 * s2 * state.u * gap


def closed_form_activation(sigma_sq, s: float, t):
    """Activation r(t) = 1 / (1 + ((1-s)/s) exp(-4 sigma^2 t)).

    Vectorizes over `sigma_sq` and/or `t`.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"init scale must lie in (0, 1), got {s}")
    return 1.0 / (1.0 + (1.0 - s) / s * np.exp(-4.0 * np.asarray(sigma_sq, dtype=float) * np.asarray(t, dtype=float)))


def warmup_checkpoint(spectrum: Spectrum, epsilon: float, warmup_time: float) -> DiagState:
    """Balanced state after `warmup_time` of plain-AE flow, evaluated analytically.

    u_j = v_j = sqrt(r_j(warmup_time)) with the closed-form activation at
    init scale epsilon^2. No integration is performed.
    """
    if not 0.0 < epsilon * epsilon < 1.0:
        raise ValueError(f"epsilon^2 must lie in (0, 1), got epsilon={epsilon}")
    if warmup_time < 0:
        raise ValueError("warm-up time must be nonnegative")
    g = closed_form_activation(spectrum.values, epsilon * epsilon, warmup_time)
    a = np.sqrt(g)
    return DiagState(u=a, v=a.copy(), t=float(warmup_time))


def default_dt(spectrum: Spectrum) -> float:
    """Step resolving the fastest mode: 1e-3 / sigma_1^2."""
    return 1e-3 / float(spectrum.values[0])


def integrate_ae(
    spectrum: Spectrum,
    init: InitConfig | DiagState,
    dt: float | None = None,
    steps: int = 10_000,
    record_every: int = 100,
) -> Trajectory:
    """Integrate the plain-AE flow with fixed-step RK4.

    Records (t, L_rec, d_eff, r_1..r_d) every `record_every` steps plus the
    final state, where L_rec = sum_j sigma_j^2 (1 - u_j v_j)^2 and d_eff is
    the effective dimension of the latent variances u_j^2 sigma_j^2.

    Raises:
        DivergenceError: if any weight magnitude exceeds 1e6.
    """
    if dt is None:
        dt = default_dt(spectrum)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(init, DiagState):
        state = DiagState(init.u, init.v, init.t)
    else:
        a = np.full(spectrum.d, init.epsilon, dtype=float)
        state = DiagState(u=a, v=a.copy(), t=0.0)
    s2 = spectrum.values
    u, v = state.u, state.v
    t0 = state.t

    times, l_recs, d_effs, activations = [], [], [], []

    def record(step):
        r = u * v
        times.append(t0 + step * dt)
        l_recs.append(float(np.sum(s2 * (1.0 - r) ** 2)))
        d_effs.append(_latent_deff(u, s2))
        activations.append(r.copy())

    def build_trajectory():
        return Trajectory(
            times=np.asarray(times),
            columns={
                "L_rec": np.asarray(l_recs),
                "d_eff": np.asarray(d_effs, dtype=float),
                "r": np.asarray(activations),
            },
        )

    for step in range(steps):
        if step % record_every == 0:
            record(step)
        u, v = _rk4_ae(u, v, s2, dt)
        if max(np.max(np.abs(u)), np.max(np.abs(v))) > DIVERGENCE_LIMIT:
            err = DivergenceError(
                f"plain-AE flow diverged at t={t0 + (step + 1) * dt:.6g} "
                f"(|weight| > {DIVERGENCE_LIMIT:g}); reduce dt",
                t=t0 + (step + 1) * dt,
                step=step + 1,
            )
            err.partial_trajectory = build_trajectory()
            raise err
    record(steps)
    return build_trajectory()


def _latent_deff(u, s2):
    lam = u * u * s2
    if not np.any(lam > 0):
        return 0
    lam_desc = np.sort(lam)[::-1]
    return effective_dimension(Spectrum(lam_desc))


def _ae_rhs(u, v, s2):
    gap = 1.0 - u * v
    return 2.0 * s2 * v * gap, 2.0 * s2 * u * gap


def _rk4_ae(u, v, s2, dt):
    ku1, kv1 = _ae_rhs(u, v, s2)
    ku2, kv2 = _ae_rhs(u + 0.5 * dt * ku1, v + 0.5 * dt * kv1, s2)
    ku3, kv3 = _ae_rhs(u + 0.5 * dt * ku2, v + 0.5 * dt * kv2, s2)
    ku4, kv4 = _ae_rhs(u + dt * ku3, v + dt * kv3, s2)
    u_new = u + dt / 6.0 * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4)
    v_new = v + dt / 6.0 * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4)
    return u_new, v_new
