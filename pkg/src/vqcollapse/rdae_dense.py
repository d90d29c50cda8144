"""Dense rate-distortion autoencoder flow with per-step eigendecomposition.

The dense flow evolves full d x d encoder/decoder matrices:

    W1_dot = -2 (W2^T W2 M W1 - W2^T) Sigma - 2 beta (W1 - M W1) Sigma,
    W2_dot =  2 Sigma W1^T M - 2 W2 Gamma_q,

where the channel matrices come from the eigendecomposition of the latent
covariance Sigma_z = W1 Sigma W1^T = U Lambda U^T: water-fill the eigenvalues,
then M = U diag(c_j) U^T and Gamma_q = U diag(c_j lambda_j) U^T. In the
infinite-rate limit M -> I, Gamma_q -> Sigma_z and the flow reduces to the
plain-AE gradient flow (`identity_channel` forces that limit exactly).

Multi-seed sweeps are integrated as one batched (seeds, d, d) system so the
128-seed reference runs stay fast on a single core. Reconstruction loss is
computed from moment identities (tr Sigma - 2 tr(W2 M W1 Sigma)
+ tr(W2^T W2 Gamma_q)), never by sampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .spectral import Spectrum
from .trajectory import Trajectory, median_trajectory
from .waterfill import solve_level_sorted, solve_level_sorted_batch

DEFF_THRESHOLD = 0.99


@dataclass
class DenseState:
    """Dense encoder/decoder matrices plus the simulation clock."""

    W1: np.ndarray
    W2: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float).copy()
        self.W2 = np.asarray(self.W2, dtype=float).copy()
        if self.W1.shape != self.W2.shape or self.W1.ndim != 2:
            raise ValueError(f"W1/W2 must be equal-shape square matrices, got {self.W1.shape} and {self.W2.shape}")
        if not (np.all(np.isfinite(self.W1)) and np.all(np.isfinite(self.W2))):
            raise ValueError("state weights must be finite")


@dataclass
class DenseChannel:
    """Channel matrices in the latent eigenbasis."""

    eigvecs: np.ndarray = field(repr=False)   # U, columns are eigenvectors
    eigvals: np.ndarray = field(repr=False)   # descending, clamped at 0
    M: np.ndarray = field(repr=False)         # U diag(c) U^T
    gamma_q: np.ndarray = field(repr=False)   # U diag(c * lambda) U^T
    water_level: float = 0.0
    active_count: int = 0


@dataclass
class DenseSimConfig:
    """Configuration of a dense-flow seed sweep."""

    spectrum: Spectrum
    rate_bits: float
    beta: float = 1.0
    init_scale: float = 0.01   # W entries ~ N(0, init_scale^2 / (4 d))
    seed: int = 0
    num_seeds: int = 1
    dt: float = 0.01
    steps: int = 1000
    record_every: int = 100
    identity_channel: bool = False
    initial_state: DenseState | None = None
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.rate_bits < 0:
            raise ValueError("rate must be nonnegative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be positive")
        if self.initial_state is not None and self.num_seeds != 1:
            raise ValueError("an explicit initial state requires num_seeds = 1")


@dataclass
class DenseRunResult:
    trajectories: list[Trajectory]
    median: Trajectory
    aborted_seeds: list[int]
    summary: dict


def seed_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-run generator: SeedSequence(entropy=master_seed, spawn_key=(index,))."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)))


def gaussian_init(spectrum: Spectrum, init_scale: float, master_seed: int, index: int) -> DenseState:
    """i.i.d. N(0, init_scale^2/(4d)) entries for W1 then W2."""
    d = spectrum.d
    rng = seed_rng(master_seed, index)
    std = init_scale / (2.0 * np.sqrt(d))
    w1 = rng.standard_normal((d, d)) * std
    w2 = rng.standard_normal((d, d)) * std
    return DenseState(W1=w1, W2=w2, t=0.0)


def dense_channel(W1, spectrum: Spectrum, rate_bits: float) -> DenseChannel:
    """Solve the rate-R channel for the latent covariance of `W1`.

    Eigenvalues are sorted descending and eigenvector signs fixed so each
    column's largest-magnitude component is positive. A zero latent
    covariance yields the degenerate channel M = 0 with an empty active set.
    """
    W1 = np.asarray(W1, dtype=float)
    if not np.all(np.isfinite(W1)):
        raise ValueError("encoder matrix has non-finite entries")
    s2 = spectrum.values
    sigma_z = (W1 * s2) @ W1.T
    sigma_z = 0.5 * (sigma_z + sigma_z.T)
    eigvals, eigvecs = np.linalg.eigh(sigma_z)
    eigvals = np.maximum(eigvals[::-1], 0.0)
    eigvecs = eigvecs[:, ::-1]
    flip = np.sign(eigvecs[np.argmax(np.abs(eigvecs), axis=0), np.arange(eigvecs.shape[1])])
    eigvecs = eigvecs * np.where(flip == 0, 1.0, flip)
    if eigvals[0] <= 0.0:
        zero = np.zeros_like(sigma_z)
        return DenseChannel(eigvecs=eigvecs, eigvals=eigvals, M=zero, gamma_q=zero.copy(),
                            water_level=0.0, active_count=0)
    dstar, k = solve_level_sorted(eigvals, rate_bits)
    c = np.where(eigvals > dstar, 1.0 - dstar / np.where(eigvals > dstar, eigvals, 1.0), 0.0)
    M = (eigvecs * c) @ eigvecs.T
    gamma_q = (eigvecs * (c * eigvals)) @ eigvecs.T
    return DenseChannel(eigvecs=eigvecs, eigvals=eigvals, M=M, gamma_q=gamma_q,
                        water_level=float(dstar), active_count=int(k))


def dense_rdae_derivatives(state: DenseState, spectrum: Spectrum, channel: DenseChannel, beta: float):
    """(W1_dot, W2_dot) of the dense quantized flow for a pre-solved channel."""
    s2 = spectrum.values
    W1, W2 = state.W1, state.W2
    if W1.shape[1] != spectrum.d:
        raise ValueError(f"state dimension {W1.shape} does not match spectrum dimension {spectrum.d}")
    MW1 = channel.M @ W1
    W1_dot = -2.0 * ((W2.T @ W2) @ MW1 - W2.T) * s2 - 2.0 * beta * (W1 - MW1) * s2
    W2_dot = 2.0 * s2[:, None] * (MW1.T) - 2.0 * W2 @ channel.gamma_q
    return W1_dot, W2_dot


def dense_eigenvalue_rate(W1, W1_dot, spectrum: Spectrum, eigvec_j) -> float:
    """Instantaneous eigenvalue speed u^T Sigma_z_dot u for one eigen-direction."""
    u = np.asarray(eigvec_j, dtype=float)
    norm = float(np.linalg.norm(u))
    if abs(norm - 1.0) > 1e-8:
        warnings.warn(f"eigenvector norm {norm:.6g} != 1; normalizing", stacklevel=2)
        u = u / norm
    s2 = spectrum.values
    half = (np.asarray(W1_dot) * s2) @ np.asarray(W1).T
    sigma_z_dot = half + half.T
    return float(u @ sigma_z_dot @ u)


def dense_water_level_log_derivative(channel: DenseChannel, W1, W1_dot, spectrum: Spectrum) -> float:
    """d(log D*)/dt = (1/k) sum over active modes of lambda_dot_j / lambda_j."""
    k = channel.active_count
    if k == 0:
        raise ValueError("water level derivative needs a nonempty active set")
    s2 = spectrum.values
    half = (np.asarray(W1_dot) * s2) @ np.asarray(W1).T
    sigma_z_dot = half + half.T
    total = 0.0
    for j in range(k):
        u = channel.eigvecs[:, j]
        total += float(u @ sigma_z_dot @ u) / float(channel.eigvals[j])
    return total / k


def _batch_rhs(W1, W2, s2, rate_bits, beta, identity):
    """Batched flow RHS. Returns (W1_dot, W2_dot, extras) where extras carry
    the stage's channel data for recording.

    The channel is assembled in the eigensolver's ascending order: M and
    Gamma_q are invariant to how eigenpairs are ordered, and keeping LAPACK's
    layout avoids negative-stride operands in the hot matmuls.
    """
    W1t = W1.transpose(0, 2, 1)
    W2t = W2.transpose(0, 2, 1)
    sigma_z = (W1 * s2) @ W1t
    A = W2t @ W2
    if identity:
        W1_dot = -2.0 * (A @ W1 - W2t) * s2
        W2_dot = 2.0 * s2[None, :, None] * W1t - 2.0 * W2 @ sigma_z
        return W1_dot, W2_dot, (sigma_z, A)
    sigma_z = 0.5 * (sigma_z + sigma_z.transpose(0, 2, 1))
    w_asc, U = np.linalg.eigh(sigma_z)
    w_asc = np.maximum(w_asc, 0.0)
    dstar, k = solve_level_sorted_batch(w_asc[:, ::-1], rate_bits)
    above = w_asc > dstar[:, None]
    c = np.where(above, 1.0 - dstar[:, None] / np.where(above, w_asc, 1.0), 0.0)
    MW1 = U @ (c[:, :, None] * (U.transpose(0, 2, 1) @ W1))
    W1_dot = -2.0 * (A @ MW1 - W2t) * s2 - 2.0 * beta * (W1 - MW1) * s2
    W2U = W2 @ U
    W2_gamma = (W2U * (c * w_asc)[:, None, :]) @ U.transpose(0, 2, 1)
    W2_dot = 2.0 * s2[None, :, None] * MW1.transpose(0, 2, 1) - 2.0 * W2_gamma
    return W1_dot, W2_dot, (w_asc, c, dstar, k, MW1, W2U)


def _batch_deff(eigvals_desc):
    cum = np.cumsum(eigvals_desc, axis=1)
    total = cum[:, -1]
    deff = np.argmax(cum >= DEFF_THRESHOLD * total[:, None], axis=1) + 1
    return np.where(total > 0, deff, 0)


def _batch_metrics(W1, W2, s2, extras, identity):
    """Per-seed (L_rec, d_eff, active_count, water_level) from stage extras."""
    tr_sigma = float(np.sum(s2))
    if identity:
        sigma_z, A = extras
        diag_w2w1 = np.einsum("sik,ski->si", W2, W1)
        cross = diag_w2w1 @ s2
        quad = np.einsum("sij,sij->s", A, 0.5 * (sigma_z + sigma_z.transpose(0, 2, 1)))
        l_rec = tr_sigma - 2.0 * cross + quad
        w = np.maximum(np.linalg.eigvalsh(sigma_z), 0.0)
        d_eff = _batch_deff(w[:, ::-1])
        active = np.sum(w > 0.0, axis=1)
        level = np.zeros(W1.shape[0])
        return l_rec, d_eff, active, level
    w_asc, c, dstar, k, MW1, W2U = extras
    diag_w2mw1 = np.einsum("sik,ski->si", W2, MW1)
    cross = diag_w2mw1 @ s2
    quad = np.einsum("sij,sj->s", W2U**2, c * w_asc)
    l_rec = tr_sigma - 2.0 * cross + quad
    return l_rec, _batch_deff(w_asc[:, ::-1]), k.astype(int), dstar


def integrate_dense_rdae(config: DenseSimConfig) -> DenseRunResult:
    """Integrate a batch of seeds under the dense flow with fixed-step RK4.

    The channel is recomputed at every RK4 sub-stage. Per-seed trajectories
    record (t, L_rec, d_eff, active_count, water_level) every `record_every`
    steps plus the final state; the result carries the pointwise median over
    seeds. Seeds whose weights exceed `divergence_limit` are reverted to
    their last finite state, excluded from the median, and reported in
    `aborted_seeds`.
    """
    spectrum = config.spectrum
    s2 = spectrum.values
    d = spectrum.d
    n = config.num_seeds
    if config.initial_state is not None:
        if config.initial_state.W1.shape != (d, d):
            raise ValueError("initial state dimension does not match the spectrum")
        W1 = config.initial_state.W1[None, :, :].copy()
        W2 = config.initial_state.W2[None, :, :].copy()
        t0 = config.initial_state.t
    else:
        states = [gaussian_init(spectrum, config.init_scale, config.seed, i) for i in range(n)]
        W1 = np.stack([st.W1 for st in states])
        W2 = np.stack([st.W2 for st in states])
        t0 = 0.0
    dt = config.dt
    live = np.ones(n, dtype=bool)
    aborted: list[int] = []

    times = []
    recs: dict[str, list[np.ndarray]] = {"L_rec": [], "d_eff": [], "active_count": [], "water_level": []}

    def rhs(a, b):
        return _batch_rhs(a, b, s2, config.rate_bits, config.beta, config.identity_channel)

    def record(step, extras):
        l_rec, d_eff, active, level = _batch_metrics(W1, W2, s2, extras, config.identity_channel)
        times.append(t0 + step * dt)
        recs["L_rec"].append(np.asarray(l_rec, dtype=float))
        recs["d_eff"].append(np.asarray(d_eff, dtype=float))
        recs["active_count"].append(np.asarray(active, dtype=float))
        recs["water_level"].append(np.asarray(level, dtype=float))

    for step in range(config.steps):
        k1_w1, k1_w2, extras = rhs(W1, W2)
        if step % config.record_every == 0:
            record(step, extras)
        k2_w1, k2_w2, _ = rhs(W1 + 0.5 * dt * k1_w1, W2 + 0.5 * dt * k1_w2)
        k3_w1, k3_w2, _ = rhs(W1 + 0.5 * dt * k2_w1, W2 + 0.5 * dt * k2_w2)
        k4_w1, k4_w2, _ = rhs(W1 + dt * k3_w1, W2 + dt * k3_w2)
        new_w1 = W1 + dt / 6.0 * (k1_w1 + 2.0 * k2_w1 + 2.0 * k3_w1 + k4_w1)
        new_w2 = W2 + dt / 6.0 * (k1_w2 + 2.0 * k2_w2 + 2.0 * k3_w2 + k4_w2)
        mags = np.maximum(
            np.abs(new_w1).reshape(n, -1).max(axis=1), np.abs(new_w2).reshape(n, -1).max(axis=1)
        )
        bad = live & (~np.isfinite(mags) | (mags > config.divergence_limit))
        if bad.any():
            for s in np.nonzero(bad)[0]:
                aborted.append(int(s))
                live[s] = False
            new_w1[bad] = W1[bad]
            new_w2[bad] = W2[bad]
            if not live.any():
                raise DivergenceError("all seeds diverged; reduce dt", step=step + 1)
        update = live[:, None, None]
        W1 = np.where(update, new_w1, W1)
        W2 = np.where(update, new_w2, W2)
    _, _, extras = rhs(W1, W2)
    record(config.steps, extras)

    time_grid = np.asarray(times)
    stacked = {name: np.stack(vals, axis=0) for name, vals in recs.items()}  # (records, seeds)
    trajectories = [
        Trajectory(times=time_grid.copy(), columns={name: stacked[name][:, i] for name in stacked})
        for i in range(n)
    ]
    live_idx = np.nonzero(live)[0]
    median = median_trajectory([trajectories[i] for i in live_idx])
    final_l = stacked["L_rec"][-1, live_idx]
    summary = {
        "rate_bits": config.rate_bits,
        "beta": config.beta,
        "num_seeds": n,
        "aborted_seeds": len(aborted),
        "identity_channel": config.identity_channel,
        "final_d_eff_median": float(median.final("d_eff")),
        "final_L_rec_median": float(median.final("L_rec")),
        "final_L_rec_variance": float(np.var(final_l)),
        "final_water_level_median": float(median.final("water_level")),
        "final_active_count_median": float(median.final("active_count")),
    }
    return DenseRunResult(trajectories=trajectories, median=median, aborted_seeds=aborted, summary=summary)
