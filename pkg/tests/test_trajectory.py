"""Trajectory container, CSV dialect, medians, and plot-data emission."""

import numpy as np
import pytest

from vqcollapse.cli import emit_plot_data, svg_line_chart
from vqcollapse.trajectory import Trajectory, format_float, median_trajectory


def make_traj(times, **cols):
    return Trajectory(times=np.asarray(times, dtype=float),
                      columns={k: np.asarray(v) for k, v in cols.items()})


class TestFormat:
    def test_seventeen_digit_round_trip(self):
        values = [1.0 / 3.0, np.pi, 1e-300, 123456.789, 2.0 ** -52]
        for v in values:
            assert float(format_float(v)) == v


class TestTrajectory:
    def test_header_expands_vector_columns(self):
        traj = make_traj([0.0, 1.0], L_rec=[1.0, 0.5], r=[[0.1, 0.2], [0.3, 0.4]])
        assert traj.header() == ["t", "L_rec", "r_1", "r_2"]

    def test_csv_round_trip_values(self):
        traj = make_traj([0.0, 1.0], L_rec=[1.0 / 3.0, 0.5])
        lines = traj.to_csv().strip().split("\n")
        assert lines[0] == "t,L_rec"
        assert float(lines[1].split(",")[1]) == 1.0 / 3.0

    def test_final(self):
        traj = make_traj([0.0, 1.0], x=[3.0, 7.0])
        assert traj.final("x") == 7.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            make_traj([0.0, 1.0], x=[1.0])


class TestMedian:
    def test_pointwise_median(self):
        trajs = [make_traj([0.0, 1.0], x=[1.0, 10.0]),
                 make_traj([0.0, 1.0], x=[2.0, 20.0]),
                 make_traj([0.0, 1.0], x=[3.0, 30.0])]
        med = median_trajectory(trajs)
        assert med.column("x").tolist() == [2.0, 20.0]

    def test_rejects_mismatched_grids(self):
        with pytest.raises(ValueError):
            median_trajectory([make_traj([0.0, 1.0], x=[1.0, 2.0]),
                               make_traj([0.0, 2.0], x=[1.0, 2.0])])


class TestPlotData:
    def test_long_format(self):
        trajs = {
            "a": make_traj([0.0, 1.0], L_rec=[1.0, 0.5], d_eff=[4.0, 3.0]),
            "b": make_traj([0.0, 1.0], L_rec=[2.0, 1.5], d_eff=[4.0, 4.0]),
        }
        text = emit_plot_data(trajs, ["L_rec", "d_eff"])
        lines = text.strip().split("\n")
        assert lines[0] == "series,t,value"
        # 2 trajectories x 2 metrics x 2 records
        assert len(lines) == 1 + 8
        assert lines[1].startswith("a:L_rec,0,")

    def test_single_series(self):
        text = emit_plot_data({"only": make_traj([0.0], L_rec=[1.0])}, ["L_rec"])
        assert len(text.strip().split("\n")) == 2

    def test_mismatched_grids_rejected(self):
        trajs = {
            "a": make_traj([0.0, 1.0], L_rec=[1.0, 0.5]),
            "b": make_traj([0.0, 2.0], L_rec=[2.0, 1.5]),
        }
        with pytest.raises(ValueError):
            emit_plot_data(trajs, ["L_rec"])

    def test_svg_well_formed(self):
        import xml.etree.ElementTree as ET

        svg = svg_line_chart({"s": (np.array([0.0, 1.0]), np.array([1.0, 2.0]))}, "demo")
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        assert any(child.tag.endswith("polyline") for child in root.iter())
