"""Variance spectra: synthesis, estimation from samples, and effective dimension.

A spectrum is a descending vector of nonnegative variances. It is the object
the water-filling solver and the effective-dimension metric operate on,
whether it comes from a synthetic power law or from the PCA eigenvalues of a
matrix of latent samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Relative tolerance for clamping small negative eigenvalues emitted by
# symmetric eigensolvers on PSD inputs.
_EIG_CLAMP_REL = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Descending, finite, nonnegative variances (sigma_j^2 or eigenvalues)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).ravel()
        if values.size < 1:
            raise ValueError("spectrum must contain at least one value")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrum values must be finite")
        if np.any(values < 0):
            raise ValueError("spectrum values must be nonnegative")
        if np.any(np.diff(values) > 0):
            raise ValueError("spectrum values must be sorted non-increasing")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    def __len__(self) -> int:
        return self.values.size


def power_law_spectrum(d: int, exponent: float) -> Spectrum:
    """Spectrum with sigma_j^2 = j^(-exponent) for j = 1..d.

    exponent = 0 gives a flat spectrum. Negative exponents would produce an
    increasing sequence and are rejected.
    """
    if d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    if exponent < 0:
        raise ValueError("negative exponents produce an increasing spectrum")
    j = np.arange(1, d + 1, dtype=float)
    return Spectrum(j ** (-float(exponent)))


def eigen_spectrum(samples) -> Spectrum:
    """PCA eigenvalues of the sample-centered covariance, sorted descending.

    Uses the unbiased (n-1) normalization. Tiny negative eigenvalues from the
    symmetric eigensolver are clamped to zero.

    Args:
        samples: (n, d) array, n >= 2 rows of observations.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"samples must be a 2-D matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite entries")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    clamp = _EIG_CLAMP_REL * max(float(eigvals[0]), 0.0)
    eigvals = np.where(eigvals < clamp, np.maximum(eigvals, 0.0), eigvals)
    eigvals = np.maximum(eigvals, 0.0)
    return Spectrum(eigvals)


def effective_dimension(spectrum: Spectrum, threshold: float = 0.99) -> int:
    """Smallest m whose top-m cumulative variance fraction reaches `threshold`.

    With threshold = 1.0 this equals the number of strictly positive values.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    cum = np.cumsum(spectrum.values)
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("effective dimension is undefined for an all-zero spectrum")
    return int(np.argmax(cum >= threshold * total)) + 1


def load_latents(path) -> np.ndarray:
    """Read a latent sample matrix from comma-separated text.

    One sample per row, d columns, decimal floats, no header. A single
    optional leading line of the form ``# dims=<d> samples=<n>`` is accepted
    and validated against the body.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh]
    lines = [line for line in lines if line]
    declared = None
    if lines and lines[0].startswith("#"):
        declared = _parse_latents_header(lines[0])
        lines = lines[1:]
    if not lines:
        raise ValueError(f"{path}: no samples found")
    rows = []
    width = None
    for i, line in enumerate(lines):
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(fields)} columns, expected {width}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 1}: {exc}") from None
    data = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries in sample matrix")
    if declared is not None:
        d, n = declared
        if data.shape != (n, d):
            raise ValueError(
                f"{path}: header declares dims={d} samples={n}, body is {data.shape[1]}x{data.shape[0]}"
            )
    return data


def _parse_latents_header(line):
    tokens = line.lstrip("#").split()
    fields = dict(tok.split("=", 1) for tok in tokens if "=" in tok)
    if set(fields) != {"dims", "samples"}:
        raise ValueError(f"malformed latents header: {line!r}")
    return int(fields["dims"]), int(fields["samples"])
