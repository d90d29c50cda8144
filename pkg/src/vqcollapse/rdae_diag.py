"""Diagonal rate-distortion autoencoder flow with a per-step re-solved channel.

Replacing the hard quantizer with the MSE-optimal rate-R channel turns VQ
training into a tractable ODE. On the diagonal manifold the flow reads

    u_dot_j = 2 sigma_j^2 v_j (1 - c_j u_j v_j) - 2 beta D_j / u_j,
    v_dot_j = 2 sigma_j^2 c_j u_j (1 - u_j v_j),

where the channel gains c_j and distortions D_j come from reverse
water-filling of the current latent variances lambda_j = u_j^2 sigma_j^2.
The commitment term is evaluated in the division-free form
2 beta (1 - c_j) u_j sigma_j^2, algebraically identical via
D_j = lambda_j (1 - c_j) and well defined at u_j = 0.

The integrator never freezes modes by fiat: inactive-mode stasis at beta = 1
must emerge from the equations themselves (and the beta = 0 escape route must
remain open). The channel is re-solved at every RK4 sub-stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ae_flow import DIVERGENCE_LIMIT, DiagState, InitConfig, default_dt
from .errors import DivergenceError
from .spectral import Spectrum, effective_dimension
from .trajectory import Trajectory
from .waterfill import RDChannel, solve_level_sorted

_LN2 = float(np.log(2.0))


@dataclass
class DiagSimConfig:
    """Configuration of one diagonal quantized-flow trajectory."""

    spectrum: Spectrum
    rate_bits: float
    init: InitConfig | DiagState
    beta: float = 1.0
    dt: float | None = None
    steps: int = 100_000
    record_every: int = 100
    convergence_tol: float = 1e-8
    convergence_window: int = 100  # consecutive quiet snapshots

    def __post_init__(self):
        if self.rate_bits < 0:
            raise ValueError("rate must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass
class ConvergenceReport:
    k_infinity: int
    water_level_final: float
    loss_final: float
    converged: bool


def diag_rdae_derivatives(state: DiagState, spectrum: Spectrum, channel: RDChannel, beta: float):
    """(u_dot, v_dot) of the quantized flow, for a channel solved at `state`."""
    if state.u.size != spectrum.d:
        raise ValueError(f"state dimension {state.u.size} != spectrum dimension {spectrum.d}")
    if channel.gains.size != spectrum.d:
        raise ValueError(f"channel dimension {channel.gains.size} != spectrum dimension {spectrum.d}")
    return _flow_rhs(state.u, state.v, spectrum.values, channel.gains, beta)


def _flow_rhs(u, v, s2, c, beta):
    uv = u * v
    u_dot = 2.0 * s2 * v * (1.0 - c * uv) - 2.0 * beta * (1.0 - c) * u * s2
    v_dot = 2.0 * s2 * c * u * (1.0 - uv)
    return u_dot, v_dot


def _solve_channel_arrays(u, s2, rate_bits):
    """Water level, active count, and per-mode gains for the state's latents."""
    lam = u * u * s2
    order = np.argsort(-lam, kind="stable")
    dstar, k = solve_level_sorted(lam[order], rate_bits)
    active = lam > dstar
    c = np.where(active, 1.0 - dstar / np.where(active, lam, 1.0), 0.0)
    return lam, dstar, k, c


def reconstruction_loss_diag(state: DiagState, spectrum: Spectrum, channel: RDChannel) -> float:
    """sum_j [sigma_j^2 (1 - c_j u_j v_j)^2 + v_j^2 tau_j^2]."""
    if state.u.size != spectrum.d:
        raise ValueError(f"state dimension {state.u.size} != spectrum dimension {spectrum.d}")
    s2 = spectrum.values
    c = channel.gains
    return float(np.sum(s2 * (1.0 - c * state.u * state.v) ** 2 + state.v**2 * channel.noise_vars))


def logistic_rate(r: float, sigma_sq: float, c: float) -> float:
    """Activation speed 4 sigma^2 c r (1 - r) of an active balanced mode."""
    return 4.0 * sigma_sq * c * r * (1.0 - r)


def plateau_loss(spectrum: Spectrum, k_active: int, rate_bits: float) -> float:
    """Converged reconstruction loss when exactly the top k modes survive.

    Survivors reach full activation, so the rate budget water-fills the top-k
    raw variances: k * D* + sum_{j > k} sigma_j^2 with
    D* = (prod_{i<=k} sigma_i^2)^(1/k) * 2^(-2R/k).
    """
    if not 1 <= k_active <= spectrum.d:
        raise ValueError(f"k_active must lie in [1, {spectrum.d}], got {k_active}")
    if rate_bits < 0:
        raise ValueError("rate must be nonnegative")
    s2 = spectrum.values
    if np.any(s2[:k_active] <= 0):
        raise ValueError("surviving modes must have positive variance")
    log_dstar = float(np.mean(np.log(s2[:k_active]))) - 2.0 * rate_bits * _LN2 / k_active
    return k_active * float(np.exp(log_dstar)) + float(np.sum(s2[k_active:]))


def _build_trajectory(times, l_recs, l_coms, d_effs, actives, levels, u_hist) -> Trajectory:
    return Trajectory(
        times=np.asarray(times),
        columns={
            "L_rec": np.asarray(l_recs),
            "L_com": np.asarray(l_coms),
            "d_eff": np.asarray(d_effs, dtype=float),
            "active_count": np.asarray(actives, dtype=float),
            "water_level": np.asarray(levels),
            "u": np.asarray(u_hist),
        },
    )


def integrate_diag_rdae(config: DiagSimConfig) -> tuple[Trajectory, ConvergenceReport]:
    """Integrate the diagonal quantized flow with RK4, re-solving the channel
    at every sub-stage.

    Records (t, L_rec, L_com, d_eff, active_count, water_level, u_1..u_d)
    every `record_every` steps. Convergence is declared once
    max(|u_dot|, |v_dot|) stays below `convergence_tol` for
    `convergence_window` consecutive snapshots, after which integration stops.

    Raises:
        DivergenceError: if any weight magnitude exceeds 1e6.
    """
    spectrum = config.spectrum
    s2 = spectrum.values
    dt = config.dt if config.dt is not None else default_dt(spectrum)
    if isinstance(config.init, DiagState):
        if config.init.u.size != spectrum.d:
            raise ValueError("initial state dimension does not match the spectrum")
        u = config.init.u.copy()
        v = config.init.v.copy()
        t0 = config.init.t
    else:
        u = np.full(spectrum.d, config.init.epsilon, dtype=float)
        v = u.copy()
        t0 = 0.0
    beta = config.beta
    rate = config.rate_bits

    times, l_recs, l_coms, d_effs, actives, levels, u_hist = [], [], [], [], [], [], []

    def rhs(u_, v_):
        lam, dstar, k, c = _solve_channel_arrays(u_, s2, rate)
        du, dv = _flow_rhs(u_, v_, s2, c, beta)
        return du, dv, lam, dstar, k, c

    def record(step, lam, dstar, k, c, du, dv):
        times.append(t0 + step * dt)
        l_recs.append(float(np.sum(s2 * (1.0 - c * u * v) ** 2 + v**2 * c * dstar)))
        l_coms.append(beta * float(np.sum(np.minimum(lam, dstar))))
        lam_desc = np.sort(lam)[::-1]
        d_effs.append(effective_dimension(Spectrum(lam_desc)) if lam_desc[0] > 0 else 0)
        actives.append(k)
        levels.append(dstar)
        u_hist.append(u.copy())
        return max(float(np.max(np.abs(du))), float(np.max(np.abs(dv))))

    converged = False
    quiet = 0
    final_k = 0
    final_dstar = 0.0
    for step in range(config.steps):
        du1, dv1, lam, dstar, k, c = rhs(u, v)
        final_k, final_dstar = k, dstar
        if step % config.record_every == 0:
            deriv_max = record(step, lam, dstar, k, c, du1, dv1)
            quiet = quiet + 1 if deriv_max < config.convergence_tol else 0
            if quiet >= config.convergence_window:
                converged = True
                break
        du2, dv2, *_ = rhs(u + 0.5 * dt * du1, v + 0.5 * dt * dv1)
        du3, dv3, *_ = rhs(u + 0.5 * dt * du2, v + 0.5 * dt * dv2)
        du4, dv4, *_ = rhs(u + dt * du3, v + dt * dv3)
        u = u + dt / 6.0 * (du1 + 2.0 * du2 + 2.0 * du3 + du4)
        v = v + dt / 6.0 * (dv1 + 2.0 * dv2 + 2.0 * dv3 + dv4)
        if max(np.max(np.abs(u)), np.max(np.abs(v))) > DIVERGENCE_LIMIT:
            err = DivergenceError(
                f"quantized diagonal flow diverged at t={t0 + (step + 1) * dt:.6g} "
                f"(|weight| > {DIVERGENCE_LIMIT:g}); reduce dt",
                t=t0 + (step + 1) * dt,
                step=step + 1,
            )
            err.partial_trajectory = _build_trajectory(times, l_recs, l_coms, d_effs, actives, levels, u_hist)
            raise err
    else:
        du1, dv1, lam, dstar, k, c = rhs(u, v)
        final_k, final_dstar = k, dstar
        record(config.steps, lam, dstar, k, c, du1, dv1)

    trajectory = _build_trajectory(times, l_recs, l_coms, d_effs, actives, levels, u_hist)
    report = ConvergenceReport(
        k_infinity=int(final_k),
        water_level_final=float(final_dstar),
        loss_final=float(l_recs[-1]),
        converged=converged,
    )
    return trajectory, report
