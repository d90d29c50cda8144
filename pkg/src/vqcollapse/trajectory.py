"""Recorded time series shared by all integrators, plus the common CSV dialect.

Every simulator in this package records a `Trajectory`: a time grid and a set
of named columns over that grid. CSV bodies print floats with 17 significant
digits so a round trip through text is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def format_float(x) -> str:
    """Render a float with 17 significant digits (lossless round trip)."""
    return f"{float(x):.17g}"


@dataclass
class Trajectory:
    """Time grid plus named metric columns of equal length."""

    times: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, col in self.columns.items():
            col = np.asarray(col)
            if col.shape[0] != self.times.shape[0]:
                raise ValueError(f"column {name!r} length {col.shape[0]} != {self.times.shape[0]} records")
            self.columns[name] = col

    @property
    def n_records(self) -> int:
        return int(self.times.size)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def final(self, name: str):
        """Last recorded value of a column."""
        col = self.columns[name]
        return col[-1]

    def header(self) -> list[str]:
        names = ["t"]
        for name, col in self.columns.items():
            if col.ndim == 1:
                names.append(name)
            else:
                names.extend(f"{name}_{j + 1}" for j in range(col.shape[1]))
        return names

    def rows(self):
        """Yield per-record flat value tuples matching `header()`."""
        for i in range(self.n_records):
            row = [self.times[i]]
            for col in self.columns.values():
                if col.ndim == 1:
                    row.append(col[i])
                else:
                    row.extend(col[i])
            yield row

    def to_csv(self) -> str:
        lines = [",".join(self.header())]
        for row in self.rows():
            lines.append(",".join(format_float(v) for v in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def median_trajectory(trajectories: list[Trajectory]) -> Trajectory:
    """Pointwise median across trajectories sharing one time grid."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    base = trajectories[0]
    for traj in trajectories[1:]:
        if traj.n_records != base.n_records or not np.array_equal(traj.times, base.times):
            raise ValueError("trajectories do not share a time grid")
    columns = {}
    for name in base.columns:
        stacked = np.stack([t.columns[name] for t in trajectories], axis=0)
        columns[name] = np.median(stacked, axis=0)
    return Trajectory(times=base.times.copy(), columns=columns)
