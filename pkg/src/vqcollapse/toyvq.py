"""Desk-scale hard vector-quantized linear autoencoder.

The empirical counterpart of the relaxed flows: a linear encoder/decoder pair
trained by minibatch SGD against a real nearest-neighbor codebook, with the
standard conventions of VQ training. The decoder receives the exact gradient;
the encoder receives the straight-through reconstruction gradient (quantizer
Jacobian treated as identity) plus the commitment gradient (codes constant
under stop-gradient). Codebook entries are maintained by EMA of assigned
latents with k-means initialization and dead-code respawn.

Data is sampled fresh each step from N(0, diag(spectrum)), matching the
population-loss setting of the flow modules. Trajectories record
(step, L_rec, L_com, d_eff, codebook_d_eff, utilization).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError
from .spectral import Spectrum, effective_dimension, eigen_spectrum
from .trajectory import Trajectory

_ASSIGN_CHUNK = 8192
_EMA_COUNT_FLOOR = 1e-8


@dataclass
class Codebook:
    """Nearest-neighbor codebook with EMA statistics."""

    codes: np.ndarray                 # (K, d)
    usage_ema: np.ndarray             # (K,) EMA of assignment counts
    code_mass: np.ndarray = None      # (K, d) EMA of assigned-latent sums
    ema_decay: float = 0.99
    respawn_threshold: float = 0.0

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=float)
        self.usage_ema = np.asarray(self.usage_ema, dtype=float)
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise ValueError("codebook needs at least one code")
        if self.usage_ema.shape != (self.codes.shape[0],):
            raise ValueError("usage_ema length must equal the number of codes")
        if not np.all(np.isfinite(self.usage_ema)):
            raise ValueError("usage_ema must be finite")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.respawn_threshold < 0:
            raise ValueError("respawn_threshold must be nonnegative")
        if self.code_mass is None:
            self.code_mass = self.codes * self.usage_ema[:, None]
        else:
            self.code_mass = np.asarray(self.code_mass, dtype=float)

    @property
    def size(self) -> int:
        return self.codes.shape[0]


@dataclass
class VQTrainConfig:
    """Configuration of one hard-VQ training run (latent dim = spectrum dim)."""

    spectrum: Spectrum
    codebook_size: int
    beta: float
    learning_rate: float
    batch_size: int
    total_steps: int
    warmup_steps: int = 0
    seed: int = 0
    kmeans_iters: int = 100
    init_scale: float = 0.01
    record_every: int = 50
    ema_decay: float = 0.99
    respawn_threshold: float | None = None  # default 0.01 * batch_size / K

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be positive")

    @property
    def resolved_respawn_threshold(self) -> float:
        if self.respawn_threshold is not None:
            return self.respawn_threshold
        return 0.01 * self.batch_size / self.codebook_size


@dataclass
class VQReport:
    utilization: float
    codebook_d_eff: int
    latent_d_eff: int
    loss_rec: float
    respawn_total: int
    steps: int
    codebook: Codebook = None


def export_codebook_csv(codebook: Codebook, path):
    """Write the codes as CSV (one code per row, d columns) for external analysis."""
    from .trajectory import format_float

    with open(path, "w", encoding="utf-8") as fh:
        for row in codebook.codes:
            fh.write(",".join(format_float(x) for x in row) + "\n")


def quantize(z, codebook: Codebook):
    """Index and value of the Euclidean-nearest code; ties go to the lowest index."""
    z = np.asarray(z, dtype=float)
    if z.shape != (codebook.codes.shape[1],):
        raise ValueError(f"latent shape {z.shape} does not match code dimension {codebook.codes.shape[1]}")
    dist_sq = np.sum((codebook.codes - z) ** 2, axis=1)
    idx = int(np.argmin(dist_sq))
    return idx, codebook.codes[idx].copy()


def _assign(latents, codes):
    """Nearest-code index per row, chunked to bound memory."""
    code_norms = np.sum(codes**2, axis=1)
    out = np.empty(latents.shape[0], dtype=np.intp)
    for start in range(0, latents.shape[0], _ASSIGN_CHUNK):
        block = latents[start : start + _ASSIGN_CHUNK]
        scores = code_norms - 2.0 * block @ codes.T
        out[start : start + _ASSIGN_CHUNK] = np.argmin(scores, axis=1)
    return out


def kmeans_init(latents, n_codes: int, iters: int = 100, seed: int = 0) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding over encoder outputs.

    Empty clusters are re-seeded from the point farthest from its assigned
    center. Iteration stops early once assignments are stable. The returned
    codebook carries the final cluster sizes as its usage statistics.
    """
    x = np.asarray(latents, dtype=float)
    if x.ndim != 2:
        raise ValueError("latents must be a 2-D matrix")
    n = x.shape[0]
    if n < n_codes:
        raise ValueError(f"need at least {n_codes} latents for k-means, got {n}")
    rng = np.random.default_rng(seed)
    codes = _kmeans_pp_seeds(x, n_codes, rng)
    assignment = None
    for _ in range(max(iters, 1)):
        new_assignment = _assign(x, codes)
        counts = np.bincount(new_assignment, minlength=n_codes).astype(float)
        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            dist = np.sum((x - codes[new_assignment]) ** 2, axis=1)
            farthest = np.argsort(dist)[::-1][: empty.size]
            for k, idx in zip(empty, farthest):
                codes[k] = x[idx]
                new_assignment[idx] = k
            counts = np.bincount(new_assignment, minlength=n_codes).astype(float)
        sums = np.zeros_like(codes)
        np.add.at(sums, new_assignment, x)
        codes = sums / counts[:, None]
        if assignment is not None and np.array_equal(assignment, new_assignment):
            break
        assignment = new_assignment
    counts = np.bincount(_assign(x, codes), minlength=n_codes).astype(float)
    return Codebook(codes=codes, usage_ema=counts)


def _kmeans_pp_seeds(x, n_codes, rng):
    n = x.shape[0]
    codes = np.empty((n_codes, x.shape[1]))
    codes[0] = x[rng.integers(n)]
    min_dist = np.sum((x - codes[0]) ** 2, axis=1)
    for k in range(1, n_codes):
        total = min_dist.sum()
        if total <= 0:
            codes[k] = x[rng.integers(n)]
            continue
        codes[k] = x[rng.choice(n, p=min_dist / total)]
        min_dist = np.minimum(min_dist, np.sum((x - codes[k]) ** 2, axis=1))
    return codes


def respawn_dead_codes(codebook: Codebook, batch_latents, rng) -> tuple[Codebook, int]:
    """Replace codes whose usage EMA fell below the threshold.

    Each dead code becomes a uniformly random latent from the batch and its
    usage is reset to the mean usage across codes, so it is not immediately
    respawned again.
    """
    batch_latents = np.asarray(batch_latents, dtype=float)
    if batch_latents.shape[0] == 0:
        raise ValueError("respawn needs a nonempty batch")
    dead = np.nonzero(codebook.usage_ema < codebook.respawn_threshold)[0]
    if dead.size == 0:
        return codebook, 0
    mean_usage = float(codebook.usage_ema.mean())
    picks = rng.integers(0, batch_latents.shape[0], size=dead.size)
    codebook.codes[dead] = batch_latents[picks]
    codebook.usage_ema[dead] = mean_usage
    codebook.code_mass[dead] = codebook.codes[dead] * mean_usage
    return codebook, int(dead.size)


def vq_train_step(state, batch, codebook: Codebook, config: VQTrainConfig):
    """One SGD step of quantized training; mutates and returns state and codebook.

    Encoder update: straight-through reconstruction gradient plus beta times
    the commitment gradient. Decoder update: exact gradient. Codebook update:
    EMA of assigned latents (count <- decay * count + n_assigned,
    mass <- decay * mass + sum of assigned latents, code = mass / count).
    """
    from .rdae_dense import DenseState  # local import to avoid a cycle at module load
    from .ae_flow import DiagState

    if isinstance(state, DiagState):
        state = DenseState(W1=np.diag(state.u), W2=np.diag(state.v), t=state.t)
    x = np.asarray(batch, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    n = x.shape[0]
    w1, w2 = state.W1, state.W2
    z = x @ w1.T
    idx = _assign(z, codebook.codes)
    z_q = codebook.codes[idx]
    resid = x - z_q @ w2.T
    grad_w2 = -2.0 / n * resid.T @ z_q
    grad_w1 = -2.0 / n * w2.T @ (resid.T @ x) + 2.0 * config.beta / n * (z - z_q).T @ x
    w1 -= config.learning_rate * grad_w1
    w2 -= config.learning_rate * grad_w2

    counts = np.bincount(idx, minlength=codebook.size).astype(float)
    sums = np.zeros_like(codebook.codes)
    np.add.at(sums, idx, z)
    codebook.usage_ema *= codebook.ema_decay
    codebook.usage_ema += counts
    codebook.code_mass *= codebook.ema_decay
    codebook.code_mass += sums
    codebook.codes[:] = codebook.code_mass / np.maximum(codebook.usage_ema, _EMA_COUNT_FLOOR)[:, None]

    metrics = {
        "L_rec": float(np.mean(np.sum(resid**2, axis=1))),
        "L_com": config.beta * float(np.mean(np.sum((z - z_q) ** 2, axis=1))),
        "utilization": float(np.unique(idx).size / codebook.size),
        "d_eff": _deff_or_zero(z),
        "codebook_d_eff": _deff_or_zero(codebook.codes),
    }
    return state, codebook, metrics


def _deff_or_zero(rows):
    if rows.shape[0] < 2:
        return 0
    spec = eigen_spectrum(rows)
    if spec.values[0] <= 0:
        return 0
    return effective_dimension(spec)


def _plain_ae_step(state, batch, config):
    x = np.asarray(batch, dtype=float)
    n = x.shape[0]
    w1, w2 = state.W1, state.W2
    z = x @ w1.T
    resid = x - z @ w2.T
    grad_w2 = -2.0 / n * resid.T @ z
    grad_w1 = -2.0 / n * w2.T @ (resid.T @ x)
    w1 -= config.learning_rate * grad_w1
    w2 -= config.learning_rate * grad_w2
    return {
        "L_rec": float(np.mean(np.sum(resid**2, axis=1))),
        "L_com": 0.0,
        "utilization": 0.0,
        "d_eff": _deff_or_zero(z),
        "codebook_d_eff": 0,
    }


def run_vq_experiment(config: VQTrainConfig):
    """Two-phase training: plain-AE SGD for `warmup_steps`, then hard-VQ
    training with k-means init, EMA updates, and dead-code respawn.

    Returns (Trajectory, VQReport). The final report evaluates on a fresh
    held-out batch.
    """
    from .rdae_dense import DenseState

    spectrum = config.spectrum
    d = spectrum.d
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed))
    std = config.init_scale / (2.0 * np.sqrt(d))
    state = DenseState(W1=rng.standard_normal((d, d)) * std, W2=rng.standard_normal((d, d)) * std)
    scale = np.sqrt(spectrum.values)

    def draw(n):
        return rng.standard_normal((n, d)) * scale

    codebook = None
    respawn_total = 0
    times, cols = [], {name: [] for name in ("L_rec", "L_com", "d_eff", "codebook_d_eff", "utilization")}

    def record(step, metrics):
        times.append(float(step))
        for name in cols:
            cols[name].append(float(metrics[name]))

    metrics = None
    for step in range(config.total_steps):
        if step == config.warmup_steps:
            codebook = _init_codebook(state, config, draw)
        batch = draw(config.batch_size)
        if step < config.warmup_steps:
            metrics = _plain_ae_step(state, batch, config)
        else:
            state, codebook, metrics = vq_train_step(state, batch, codebook, config)
            codebook, n_respawned = respawn_dead_codes(codebook, batch @ state.W1.T, rng)
            respawn_total += n_respawned
        if max(np.max(np.abs(state.W1)), np.max(np.abs(state.W2))) > 1e6:
            err = DivergenceError(f"hard-VQ training diverged at step {step}; reduce learning_rate", step=step)
            err.partial_trajectory = Trajectory(
                times=np.asarray(times),
                columns={name: np.asarray(vals) for name, vals in cols.items()},
            )
            raise err
        if step % config.record_every == 0:
            record(step, metrics)
    if config.warmup_steps == config.total_steps:
        codebook = _init_codebook(state, config, draw)
    record(config.total_steps, metrics)

    eval_batch = draw(max(4096, config.batch_size))
    z = eval_batch @ state.W1.T
    idx = _assign(z, codebook.codes)
    z_q = codebook.codes[idx]
    resid = eval_batch - z_q @ state.W2.T
    report = VQReport(
        utilization=float(np.unique(idx).size / codebook.size),
        codebook_d_eff=_deff_or_zero(codebook.codes),
        latent_d_eff=_deff_or_zero(z),
        loss_rec=float(np.mean(np.sum(resid**2, axis=1))),
        respawn_total=respawn_total,
        steps=config.total_steps,
        codebook=codebook,
    )
    trajectory = Trajectory(
        times=np.asarray(times),
        columns={name: np.asarray(vals) for name, vals in cols.items()},
    )
    return trajectory, report


def _init_codebook(state, config: VQTrainConfig, draw):
    n_latents = min(max(100 * config.codebook_size, 10 * config.batch_size), 1_000_000)
    latents = draw(n_latents) @ state.W1.T
    codebook = kmeans_init(latents, config.codebook_size, iters=config.kmeans_iters, seed=config.seed)
    return replace(codebook, ema_decay=config.ema_decay,
                   respawn_threshold=config.resolved_respawn_threshold)
