"""Experiment runner: config-driven sweeps, CSV/summary artifacts, CLI.

Configs are flat INI-style key/value files with one section per mode (see
configs/ in the repository for the shipped presets). Every artifact is
written atomically (temp file + rename) and hashed into a manifest, so a
repeated run with the same config and seeds produces identical manifests.

Exit codes: 0 success, 2 config parse error, 3 numerical divergence
(partial artifacts kept with a .partial suffix), 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ae_flow import InitConfig, integrate_ae, warmup_checkpoint
from .errors import DivergenceError
from .rdae_dense import DenseSimConfig, integrate_dense_rdae
from .rdae_diag import DiagSimConfig, integrate_diag_rdae
from .spectral import Spectrum, effective_dimension, eigen_spectrum, load_latents, power_law_spectrum
from .toyvq import VQTrainConfig, export_codebook_csv, run_vq_experiment
from .trajectory import Trajectory, format_float
from .warmup import advise_switch, predict_from_spectrum, predict_warmup
from .waterfill import shannon_distortion, solve_water_level

ENV_OUTPUT_DIR = "VQCOLLAPSE_OUTPUT_DIR"

MODES = ("ae", "rdae-diag", "rdae-dense", "toyvq", "waterfill", "predict", "advise", "spectrum")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    mode: str
    output_dir: Path
    workers: int
    svg: bool
    parser: configparser.ConfigParser
    text: str


def load_config(path, output_override=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        parser.read_string(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if "experiment" not in parser:
        raise ConfigError("config needs an [experiment] section")
    exp = parser["experiment"]
    mode = exp.get("mode", "").strip()
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    out = output_override or os.environ.get(ENV_OUTPUT_DIR) or exp.get("output_dir", "out")
    workers = _to_int(exp.get("workers", str(os.cpu_count() or 1)), "experiment.workers")
    svg = _to_bool(exp.get("svg", "false"), "experiment.svg")
    return ExperimentConfig(mode=mode, output_dir=Path(out), workers=max(workers, 1),
                            svg=svg, parser=parser, text=text)


def _section(cfg: ExperimentConfig, name: str) -> configparser.SectionProxy:
    if name not in cfg.parser:
        raise ConfigError(f"config is missing the [{name}] section required by mode {cfg.mode!r}")
    return cfg.parser[name]


def _to_float(raw, where):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {raw!r}") from None


def _to_int(raw, where):
    try:
        return int(str(raw).strip())
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None


def _to_bool(raw, where):
    value = str(raw).strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def _to_float_list(raw, where):
    try:
        return [float(tok) for tok in str(raw).split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {raw!r}") from None


def resolve_spectrum(cfg: ExperimentConfig) -> Spectrum:
    sec = _section(cfg, "spectrum")
    kind = sec.get("kind", "power-law").strip()
    if kind == "power-law":
        d = _to_int(sec.get("d", "64"), "spectrum.d")
        exponent = _to_float(sec.get("exponent", "1.0"), "spectrum.exponent")
        return power_law_spectrum(d, exponent)
    if kind == "file":
        path = sec.get("path")
        if not path:
            raise ConfigError("spectrum.kind = file requires spectrum.path")
        return load_spectrum_file(path)
    raise ConfigError(f"spectrum.kind must be power-law or file, got {kind!r}")


def load_spectrum_file(path) -> Spectrum:
    """One variance per line (comma-separated values on a line also accepted)."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            values.extend(float(tok) for tok in line.split(",") if tok.strip())
    if not values:
        raise ValueError(f"{path}: no spectrum values found")
    return Spectrum(np.sort(np.asarray(values, dtype=float))[::-1])


def load_series_file(path):
    """Rows of (t, value); a non-numeric first row is treated as a header."""
    times, values = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ValueError(f"{path}: row {i + 1} needs at least two columns")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError:
                if not times:
                    continue  # header row
                raise ValueError(f"{path}: row {i + 1}: non-numeric entry") from None
            times.append(t)
            values.append(v)
    if not times:
        raise ValueError(f"{path}: no data rows found")
    return np.asarray(times), np.asarray(values)


# ---------------------------------------------------------------- artifacts


def atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_plot_data(trajectories: dict[str, Trajectory], metrics: list[str]) -> str:
    """Long-format (series, t, value) CSV for labelled trajectories.

    All trajectories must share one time grid.
    """
    if not trajectories:
        raise ValueError("no trajectories to plot")
    items = list(trajectories.items())
    base = items[0][1]
    for label, traj in items[1:]:
        if traj.n_records != base.n_records or not np.array_equal(traj.times, base.times):
            raise ValueError(f"trajectory {label!r} does not share the common time grid")
    lines = ["series,t,value"]
    for label, traj in items:
        for metric in metrics:
            col = traj.columns[metric]
            if col.ndim != 1:
                continue
            for t, v in zip(traj.times, col):
                lines.append(f"{label}:{metric},{format_float(t)},{format_float(v)}")
    return "\n".join(lines) + "\n"


def svg_line_chart(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str,
                   width: int = 640, height: int = 400) -> str:
    """Minimal standalone SVG line chart (no external renderer)."""
    pad = 46
    xs = np.concatenate([np.asarray(t, dtype=float) for t, _ in series.values()])
    ys = np.concatenate([np.asarray(v, dtype=float) for _, v in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="10">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>',
    ]
    for i, (label, (t, v)) in enumerate(series.items()):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(t, v))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i + 4}" font-size="10" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------- cells


@dataclass
class CellResult:
    name: str
    status: str               # ok | divergence | error
    artifacts: list[str]
    summary: dict
    error: str | None = None


def _write_traj(outdir: Path, rel: str, traj: Trajectory, partial=False) -> str:
    rel = rel + (".partial" if partial else "")
    atomic_write_text(outdir / rel, traj.to_csv())
    return rel


def _run_cell(name, fn) -> CellResult:
    try:
        artifacts, summary = fn()
        return CellResult(name=name, status="ok", artifacts=artifacts, summary=summary)
    except DivergenceError as exc:
        partials = getattr(exc, "partial_artifacts", [])
        return CellResult(name=name, status="divergence", artifacts=partials,
                          summary={}, error=str(exc))
    except OSError:
        raise
    except Exception as exc:  # sweep isolation: one bad cell must not kill the rest
        return CellResult(name=name, status="error", artifacts=[], summary={}, error=f"{type(exc).__name__}: {exc}")


def build_cells(cfg: ExperimentConfig):
    builder = {
        "ae": _cells_ae,
        "rdae-diag": _cells_rdae_diag,
        "rdae-dense": _cells_rdae_dense,
        "toyvq": _cells_toyvq,
        "waterfill": _cells_waterfill,
        "predict": _cells_predict,
        "advise": _cells_advise,
        "spectrum": _cells_spectrum,
    }[cfg.mode]
    return builder(cfg)


def _cells_ae(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "ae")
    init = InitConfig(_to_float(sec.get("init_scale", "0.01"), "ae.init_scale"))
    dt = _to_float(sec.get("dt"), "ae.dt") if sec.get("dt") else None
    steps = _to_int(sec.get("steps", "10000"), "ae.steps")
    record_every = _to_int(sec.get("record_every", "100"), "ae.record_every")

    def run():
        traj = integrate_ae(spectrum, init, dt=dt, steps=steps, record_every=record_every)
        rel = _write_traj(cfg.output_dir, "ae_trajectory.csv", traj)
        summary = {"final_L_rec": float(traj.final("L_rec")), "final_d_eff": float(traj.final("d_eff"))}
        return [rel], summary

    return [("ae", run)]


def _cells_rdae_diag(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "rdae-diag")
    rates = _to_float_list(sec.get("rates", sec.get("rate_bits", "")), "rdae-diag.rates")
    if not rates:
        raise ConfigError("rdae-diag needs rates")
    beta = _to_float(sec.get("beta", "1.0"), "rdae-diag.beta")
    dt = _to_float(sec.get("dt"), "rdae-diag.dt") if sec.get("dt") else None
    steps = _to_int(sec.get("steps", "100000"), "rdae-diag.steps")
    record_every = _to_int(sec.get("record_every", "100"), "rdae-diag.record_every")
    tol = _to_float(sec.get("convergence_tol", "1e-8"), "rdae-diag.convergence_tol")
    epsilon = _to_float(sec.get("epsilon"), "rdae-diag.epsilon") if sec.get("epsilon") else None
    warm_times = _to_float_list(sec.get("warmup_times", ""), "rdae-diag.warmup_times") if sec.get("warmup_times") else [None]
    init_scale = _to_float(sec.get("init_scale", "0.01"), "rdae-diag.init_scale")

    cells = []
    for rate in rates:
        for t_wu in warm_times:
            name = f"rdae-diag_R{rate:g}" + (f"_Twu{t_wu:g}" if t_wu is not None else "")
            cells.append((name, _make_diag_cell(cfg, spectrum, rate, t_wu, epsilon, init_scale,
                                                beta, dt, steps, record_every, tol, name)))
    return cells


def _write_partial(cfg, name, exc):
    partial = getattr(exc, "partial_trajectory", None)
    if partial is not None and partial.n_records:
        exc.partial_artifacts = [_write_traj(cfg.output_dir, f"{name}.csv", partial, partial=True)]
    raise exc


def _make_diag_cell(cfg, spectrum, rate, t_wu, epsilon, init_scale, beta, dt, steps, record_every, tol, name):
    def run():
        if t_wu is not None:
            if epsilon is None:
                raise ConfigError("rdae-diag.warmup_times requires rdae-diag.epsilon")
            init = warmup_checkpoint(spectrum, epsilon, t_wu)
        else:
            init = InitConfig(init_scale)
        config = DiagSimConfig(spectrum=spectrum, rate_bits=rate, init=init, beta=beta,
                               dt=dt, steps=steps, record_every=record_every, convergence_tol=tol)
        try:
            traj, report = integrate_diag_rdae(config)
        except DivergenceError as exc:
            _write_partial(cfg, name, exc)
        rel = _write_traj(cfg.output_dir, f"{name}.csv", traj)
        summary = {
            "rate_bits": rate,
            "warmup_time": t_wu,
            "k_infinity": report.k_infinity,
            "loss_final": report.loss_final,
            "water_level_final": report.water_level_final,
            "converged": report.converged,
            "shannon_distortion": shannon_distortion(spectrum, rate),
        }
        if t_wu is not None and epsilon is not None:
            pred = predict_warmup(spectrum, epsilon, t_wu, rate)
            summary["predicted_max_modes"] = pred.max_surviving_modes
            summary["loss_bound"] = pred.loss_bound
        return [rel], summary

    return run


def _cells_rdae_dense(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "rdae-dense")
    rates = _to_float_list(sec.get("rates", ""), "rdae-dense.rates")
    identity = _to_bool(sec.get("identity_channel", "false"), "rdae-dense.identity_channel")
    if not rates:
        if not identity:
            raise ConfigError("rdae-dense needs rates (or identity_channel = true)")
        rates = [0.0]
    beta = _to_float(sec.get("beta", "1.0"), "rdae-dense.beta")
    init_scale = _to_float(sec.get("init_scale", "0.01"), "rdae-dense.init_scale")
    seed = _to_int(sec.get("master_seed", "0"), "rdae-dense.master_seed")
    num_seeds = _to_int(sec.get("num_seeds", "1"), "rdae-dense.num_seeds")
    dt = _to_float(sec.get("dt", "0.01"), "rdae-dense.dt")
    steps = _to_int(sec.get("steps", "1000"), "rdae-dense.steps")
    record_every = _to_int(sec.get("record_every", "100"), "rdae-dense.record_every")
    save_seeds = _to_bool(sec.get("save_seed_trajectories", "true"), "rdae-dense.save_seed_trajectories")

    cells = []
    for rate in rates:
        name = "rdae-dense_plainae" if identity else f"rdae-dense_R{rate:g}"
        config = DenseSimConfig(spectrum=spectrum, rate_bits=rate, beta=beta, init_scale=init_scale,
                                seed=seed, num_seeds=num_seeds, dt=dt, steps=steps,
                                record_every=record_every, identity_channel=identity)
        cells.append((name, _make_dense_cell(cfg, config, name, save_seeds)))
    if not identity and _to_bool(sec.get("plain_ae_cell", "false"), "rdae-dense.plain_ae_cell"):
        plain_steps = _to_int(sec.get("plain_ae_steps", str(steps)), "rdae-dense.plain_ae_steps")
        config = DenseSimConfig(spectrum=spectrum, rate_bits=0.0, beta=beta, init_scale=init_scale,
                                seed=seed, num_seeds=num_seeds, dt=dt, steps=plain_steps,
                                record_every=record_every, identity_channel=True)
        cells.append(("rdae-dense_plainae", _make_dense_cell(cfg, config, "rdae-dense_plainae", save_seeds)))
    return cells


def _make_dense_cell(cfg, config, name, save_seeds):
    def run():
        result = integrate_dense_rdae(config)
        artifacts = [_write_traj(cfg.output_dir, f"{name}_median.csv", result.median)]
        if save_seeds:
            for i, traj in enumerate(result.trajectories):
                artifacts.append(_write_traj(cfg.output_dir, f"{name}_seed{i:03d}.csv", traj))
        return artifacts, dict(result.summary)

    return run


def _cells_toyvq(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "toyvq")
    sizes = [int(k) for k in _to_float_list(sec.get("codebook_sizes", "256"), "toyvq.codebook_sizes")]
    warmups = [int(w) for w in _to_float_list(sec.get("warmup_steps", "0"), "toyvq.warmup_steps")]
    base = dict(
        beta=_to_float(sec.get("beta", "1.0"), "toyvq.beta"),
        learning_rate=_to_float(sec.get("learning_rate", "0.05"), "toyvq.learning_rate"),
        batch_size=_to_int(sec.get("batch_size", "512"), "toyvq.batch_size"),
        total_steps=_to_int(sec.get("total_steps", "4000"), "toyvq.total_steps"),
        seed=_to_int(sec.get("seed", "0"), "toyvq.seed"),
        kmeans_iters=_to_int(sec.get("kmeans_iters", "100"), "toyvq.kmeans_iters"),
        init_scale=_to_float(sec.get("init_scale", "0.01"), "toyvq.init_scale"),
        record_every=_to_int(sec.get("record_every", "50"), "toyvq.record_every"),
    )

    cells = []
    for size in sizes:
        for warm in warmups:
            name = f"toyvq_K{size}_warm{warm}"
            cells.append((name, _make_toyvq_cell(cfg, spectrum, size, warm, base, name)))
    return cells


def _make_toyvq_cell(cfg, spectrum, size, warm, base, name):
    def run():
        config = VQTrainConfig(spectrum=spectrum, codebook_size=size, warmup_steps=warm, **base)
        try:
            traj, report = run_vq_experiment(config)
        except DivergenceError as exc:
            _write_partial(cfg, name, exc)
        rel = _write_traj(cfg.output_dir, f"{name}.csv", traj)
        cb_rel = f"{name}_codebook.csv"
        export_codebook_csv(report.codebook, cfg.output_dir / cb_rel)
        summary = {
            "codebook_size": size,
            "warmup_steps": warm,
            "utilization": report.utilization,
            "codebook_d_eff": report.codebook_d_eff,
            "latent_d_eff": report.latent_d_eff,
            "loss_rec": report.loss_rec,
            "respawn_total": report.respawn_total,
        }
        return [rel, cb_rel], summary

    return run


def _waterfill_table(spectrum, rate) -> str:
    channel = solve_water_level(spectrum, rate)
    lines = ["mode,variance,distortion,gain,noise_var,active"]
    active = set(channel.active_set.tolist())
    for j, (lam, dj, cj, tj) in enumerate(
        zip(spectrum.values, channel.distortions, channel.gains, channel.noise_vars)
    ):
        lines.append(
            ",".join(
                [str(j + 1), format_float(lam), format_float(dj), format_float(cj),
                 format_float(tj), "1" if j in active else "0"]
            )
        )
    return "\n".join(lines) + "\n"


def _cells_waterfill(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "waterfill")
    rate = _to_float(sec.get("rate_bits"), "waterfill.rate_bits")

    def run():
        channel = solve_water_level(spectrum, rate)
        rel = "waterfill_table.csv"
        atomic_write_text(cfg.output_dir / rel, _waterfill_table(spectrum, rate))
        summary = {
            "rate_bits": rate,
            "water_level": channel.water_level,
            "shannon_distortion": channel.total_distortion,
            "active_count": channel.active_count,
        }
        return [rel], summary

    return [("waterfill", run)]


def _cells_predict(cfg):
    spectrum = resolve_spectrum(cfg)
    sec = _section(cfg, "predict")
    rate = _to_float(sec.get("rate_bits"), "predict.rate_bits")
    epsilon = _to_float(sec.get("epsilon"), "predict.epsilon") if sec.get("epsilon") else None
    t_wu = _to_float(sec.get("warmup_time"), "predict.warmup_time") if sec.get("warmup_time") else None

    def run():
        if epsilon is not None and t_wu is not None:
            pred = predict_warmup(spectrum, epsilon, t_wu, rate)
            summary = {
                "rate_bits": rate,
                "epsilon": epsilon,
                "warmup_time": t_wu,
                "predicted_max_modes": pred.max_surviving_modes,
                "loss_bound": pred.loss_bound,
            }
        else:
            summary = {"rate_bits": rate, "predicted_max_modes": predict_from_spectrum(spectrum, rate)}
        rel = "waterfill_table.csv"
        atomic_write_text(cfg.output_dir / rel, _waterfill_table(spectrum, rate))
        return [rel], summary

    return [("predict", run)]


def _cells_advise(cfg):
    sec = _section(cfg, "advise")
    series_path = sec.get("series")
    if not series_path:
        raise ConfigError("advise needs advise.series (CSV of t,value rows)")
    patience = _to_int(sec.get("patience", "3"), "advise.patience")
    tol = _to_float(sec.get("relative_tol", "0.0"), "advise.relative_tol")

    def run():
        times, values = load_series_file(series_path)
        advice = advise_switch(times, values, patience, tol)
        return [], {"switch_time": advice.switch_time, "converged": advice.converged}

    return [("advise", run)]


def _cells_spectrum(cfg):
    sec = _section(cfg, "spectrum")
    latents_path = sec.get("latents")
    if not latents_path:
        raise ConfigError("spectrum mode needs a latents file (key: latents)")
    rate = _to_float(sec.get("rate_bits"), "spectrum.rate_bits")

    def run():
        samples = load_latents(latents_path)
        spectrum = eigen_spectrum(samples)
        spec_rel = "empirical_spectrum.csv"
        atomic_write_text(cfg.output_dir / spec_rel,
                          "\n".join(format_float(v) for v in spectrum.values) + "\n")
        table_rel = "waterfill_table.csv"
        atomic_write_text(cfg.output_dir / table_rel, _waterfill_table(spectrum, rate))
        summary = {
            "rate_bits": rate,
            "n_samples": samples.shape[0],
            "d": spectrum.d,
            "d_eff": effective_dimension(spectrum),
            "predicted_max_modes": predict_from_spectrum(spectrum, rate),
            "shannon_distortion": shannon_distortion(spectrum, rate),
        }
        return [spec_rel, table_rel], summary

    return [("spectrum", run)]


# ---------------------------------------------------------------- run driver


def run_experiment(cfg: ExperimentConfig) -> int:
    cells = build_cells(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    results: list[CellResult] = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_run_cell, name, fn) for name, fn in cells]
        for future in futures:
            results.append(future.result())

    summary = {res.name: res.summary for res in results if res.status == "ok"}
    atomic_write_text(cfg.output_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")

    extra = _emit_plots(cfg, results)

    manifest = {
        "config_sha256": hashlib.sha256(cfg.text.encode()).hexdigest(),
        "mode": cfg.mode,
        "cells": [
            {"name": res.name, "status": res.status, **({"error": res.error} if res.error else {})}
            for res in sorted(results, key=lambda r: r.name)
        ],
        "artifacts": [],
    }
    names = sorted({a for res in results for a in res.artifacts} | {"summary.json"} | set(extra))
    for rel in names:
        manifest["artifacts"].append({"path": rel, "sha256": _sha256_file(cfg.output_dir / rel)})
    atomic_write_text(cfg.output_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")

    for res in results:
        line = f"[{res.status}] {res.name}"
        if res.error:
            line += f": {res.error}"
        print(line)
    if any(res.status == "divergence" for res in results):
        return 3
    if any(res.status == "error" for res in results):
        return 1
    return 0


def _emit_plots(cfg: ExperimentConfig, results: list[CellResult]) -> list[str]:
    """Combined long-format plot data (and optional SVG) for trajectory modes."""
    written = []
    trajs = {}
    for res in results:
        if res.status != "ok":
            continue
        for rel in res.artifacts:
            if rel.endswith("_median.csv") or (rel.endswith(".csv") and "seed" not in rel and rel.startswith(("ae", "rdae", "toyvq"))):
                trajs[res.name] = cfg.output_dir / rel
                break
    if len(trajs) < 1:
        return written
    seed_counts = {res.name: res.summary.get("num_seeds") for res in results}
    loaded = {}
    for name, path in trajs.items():
        label = name if not seed_counts.get(name) else f"{name} (median of {seed_counts[name]} seeds)"
        loaded[label] = _read_trajectory_csv(path)
    metrics = [m for m in ("L_rec", "d_eff") if all(m in t.columns for t in loaded.values())]
    if not metrics:
        return written
    try:
        text = emit_plot_data(loaded, metrics)
    except ValueError:
        return written  # mismatched time grids (e.g. early-stopped cells)
    atomic_write_text(cfg.output_dir / "plotdata.csv", text)
    written.append("plotdata.csv")
    if cfg.svg:
        for metric in metrics:
            series = {name: (t.times, t.columns[metric]) for name, t in loaded.items()}
            svg = svg_line_chart(series, f"{cfg.mode}: {metric}")
            rel = f"plot_{metric}.svg"
            atomic_write_text(cfg.output_dir / rel, svg)
            written.append(rel)
    return written


def _read_trajectory_csv(path) -> Trajectory:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    columns = {}
    for i, name in enumerate(header[1:], start=1):
        base = name.rsplit("_", 1)[0] if name.rsplit("_", 1)[-1].isdigit() else name
        if base != name:
            columns.setdefault(base, []).append(data[:, i])
        else:
            columns[name] = data[:, i]
    cols = {}
    for name, val in columns.items():
        cols[name] = np.stack(val, axis=1) if isinstance(val, list) else val
    return Trajectory(times=data[:, 0], columns=cols)


# ---------------------------------------------------------------- CLI


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vqcollapse",
                                     description="Simulate and analyze dimensional collapse in VQ autoencoders")
    parser.add_argument("--version", action="version", version=f"vqcollapse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)

    p_pred = sub.add_parser("predict", help="predict surviving modes for a spectrum and rate")
    p_pred.add_argument("--spectrum", help="spectrum CSV (one variance per line)")
    p_pred.add_argument("--power-law-d", type=int, help="synthetic spectrum dimension")
    p_pred.add_argument("--power-law-exponent", type=float, default=1.0)
    p_pred.add_argument("--epsilon", type=float, help="balanced init magnitude")
    p_pred.add_argument("--warmup-time", type=float, help="warm-up duration")
    p_pred.add_argument("--rate", type=float, required=True, help="rate budget in bits")
    p_pred.add_argument("--table", action="store_true", help="also print the water-fill table")

    p_adv = sub.add_parser("advise", help="recommend a switch point from a plateauing series")
    p_adv.add_argument("--series", required=True, help="CSV rows of t,value")
    p_adv.add_argument("--patience", type=int, required=True)
    p_adv.add_argument("--tol", type=float, required=True)

    p_wf = sub.add_parser("waterfill", help="solve reverse water-filling for a spectrum")
    p_wf.add_argument("--spectrum", required=True)
    p_wf.add_argument("--rate", type=float, required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, output_override=args.output_dir)
            return run_experiment(cfg)
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "advise":
            times, values = load_series_file(args.series)
            advice = advise_switch(times, values, args.patience, args.tol)
            flag = "converged" if advice.converged else "not-converged"
            print(f"switch_time={format_float(advice.switch_time)} status={flag}")
            return 0
        if args.command == "waterfill":
            spectrum = load_spectrum_file(args.spectrum)
            channel = solve_water_level(spectrum, args.rate)
            print(
                f"water_level={format_float(channel.water_level)} "
                f"shannon_distortion={format_float(channel.total_distortion)} "
                f"active={channel.active_count}/{spectrum.d}"
            )
            sys.stdout.write(_waterfill_table(spectrum, args.rate))
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


def _cmd_predict(args) -> int:
    if args.spectrum:
        spectrum = load_spectrum_file(args.spectrum)
    elif args.power_law_d:
        spectrum = power_law_spectrum(args.power_law_d, args.power_law_exponent)
    else:
        print("predict needs --spectrum or --power-law-d", file=sys.stderr)
        return 2
    if args.epsilon is not None and args.warmup_time is not None:
        pred = predict_warmup(spectrum, args.epsilon, args.warmup_time, args.rate)
        print(
            f"predicted_max_modes={pred.max_surviving_modes} "
            f"loss_bound={format_float(pred.loss_bound)} "
            f"shannon_distortion={format_float(shannon_distortion(spectrum, args.rate))}"
        )
    else:
        count = predict_from_spectrum(spectrum, args.rate)
        print(
            f"predicted_max_modes={count} "
            f"shannon_distortion={format_float(shannon_distortion(spectrum, args.rate))}"
        )
    if args.table:
        sys.stdout.write(_waterfill_table(spectrum, args.rate))
    return 0


if __name__ == "__main__":
    sys.exit(main())
