"""Config parsing, run driver, manifests, determinism, and CLI commands."""

import json

import numpy as np
import pytest

from vqcollapse.cli import (
    ConfigError,
    load_config,
    load_series_file,
    load_spectrum_file,
    main,
    run_experiment,
)


def write(path, text):
    path.write_text(text)
    return str(path)


DIAG_CONFIG = """
[experiment]
mode = rdae-diag
output_dir = {out}
workers = 2

[spectrum]
kind = power-law
d = 8
exponent = 1.0

[rdae-diag]
rates = 3, 5
warmup_times = 1, 4
epsilon = 0.1
beta = 1.0
dt = 0.01
steps = 30000
record_every = 20
"""


class TestConfigParsing:
    def test_missing_experiment_section(self, tmp_path):
        path = write(tmp_path / "bad.cfg", "[rdae-diag]\nrates = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_mode(self, tmp_path):
        path = write(tmp_path / "bad.cfg", "[experiment]\nmode = teleport\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_malformed_numbers(self, tmp_path):
        cfg = "[experiment]\nmode = waterfill\n[spectrum]\nkind = power-law\nd = 4\n[waterfill]\nrate_bits = lots\n"
        path = write(tmp_path / "bad.cfg", cfg)
        loaded = load_config(path)
        with pytest.raises(ConfigError):
            from vqcollapse.cli import build_cells

            build_cells(loaded)

    def test_parse_error_exit_code(self, tmp_path, capsys):
        path = write(tmp_path / "bad.cfg", "[experiment]\nmode = nope\n")
        assert main(["run", path]) == 2

    def test_missing_file_is_config_error(self):
        assert main(["run", "/nonexistent/config.cfg"]) == 2


class TestSpectrumAndSeriesLoaders:
    def test_spectrum_file(self, tmp_path):
        path = write(tmp_path / "spec.csv", "1.0\n0.5\n0.25\n")
        spec = load_spectrum_file(path)
        assert spec.values.tolist() == [1.0, 0.5, 0.25]

    def test_spectrum_file_sorts(self, tmp_path):
        path = write(tmp_path / "spec.csv", "0.5, 1.0\n")
        assert load_spectrum_file(path).values.tolist() == [1.0, 0.5]

    def test_series_file_with_header(self, tmp_path):
        path = write(tmp_path / "series.csv", "t,d_eff\n1.0,3\n2.0,4\n")
        t, v = load_series_file(path)
        assert t.tolist() == [1.0, 2.0]
        assert v.tolist() == [3.0, 4.0]


class TestRunDriver:
    def test_diag_sweep_artifacts_and_manifest(self, tmp_path):
        out = tmp_path / "out"
        path = write(tmp_path / "run.cfg", DIAG_CONFIG.format(out=out))
        assert main(["run", path]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert all(cell["status"] == "ok" for cell in manifest["cells"])
        assert len(manifest["cells"]) == 4  # 2 rates x 2 warmup times
        names = {a["path"] for a in manifest["artifacts"]}
        assert "summary.json" in names
        assert any(name.startswith("rdae-diag_R3") for name in names)
        summary = json.loads((out / "summary.json").read_text())
        cell = summary["rdae-diag_R3_Twu1"]
        assert cell["k_infinity"] <= cell["predicted_max_modes"]
        assert cell["loss_final"] >= cell["loss_bound"] - 1e-6
        assert cell["loss_final"] >= cell["shannon_distortion"] - 1e-9

    def test_manifest_deterministic(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        cfg_text = DIAG_CONFIG.replace("rates = 3, 5", "rates = 3").replace(
            "warmup_times = 1, 4", "warmup_times = 2"
        )
        path = write(tmp_path / "run.cfg", cfg_text.format(out="PLACEHOLDER"))
        assert main(["run", path, "--output-dir", str(out_a)]) == 0
        assert main(["run", path, "--output-dir", str(out_b)]) == 0
        man_a = json.loads((out_a / "manifest.json").read_text())
        man_b = json.loads((out_b / "manifest.json").read_text())
        assert man_a["artifacts"] == man_b["artifacts"]

    def test_env_var_overrides_output_dir(self, tmp_path, monkeypatch):
        out = tmp_path / "env_out"
        monkeypatch.setenv("VQCOLLAPSE_OUTPUT_DIR", str(out))
        cfg_text = "[experiment]\nmode = waterfill\noutput_dir = should_not_be_used\n" \
                   "[spectrum]\nkind = power-law\nd = 4\nexponent = 1.0\n" \
                   "[waterfill]\nrate_bits = 2.0\n"
        path = write(tmp_path / "wf.cfg", cfg_text)
        assert main(["run", path]) == 0
        assert (out / "waterfill_table.csv").exists()

    def test_divergent_cell_isolated_and_exit_3(self, tmp_path):
        out = tmp_path / "out"
        cfg_text = """
[experiment]
mode = rdae-diag
output_dir = {out}

[spectrum]
kind = power-law
d = 4
exponent = 1.0

[rdae-diag]
rates = 3
warmup_times = 1, 2
epsilon = 0.1
dt = 80.0
steps = 4000
record_every = 10
"""
        path = write(tmp_path / "run.cfg", cfg_text.format(out=out))
        code = main(["run", path])
        assert code == 3
        manifest = json.loads((out / "manifest.json").read_text())
        statuses = {c["name"]: c["status"] for c in manifest["cells"]}
        assert "divergence" in statuses.values()
        partials = list(out.glob("*.partial"))
        assert partials, "partial artifacts should be retained on divergence"

    def test_spectrum_mode_on_latents(self, tmp_path):
        rng = np.random.default_rng(0)
        latents = rng.standard_normal((400, 3)) * np.sqrt([4.0, 1.0, 0.05])
        body = "\n".join(",".join(f"{x:.9g}" for x in row) for row in latents)
        latents_path = write(tmp_path / "latents.csv", f"# dims=3 samples=400\n{body}\n")
        out = tmp_path / "out"
        cfg_text = f"""
[experiment]
mode = spectrum
output_dir = {out}

[spectrum]
latents = {latents_path}
rate_bits = 2.0
"""
        path = write(tmp_path / "spec.cfg", cfg_text)
        assert main(["run", path]) == 0
        summary = json.loads((out / "summary.json").read_text())["spectrum"]
        assert summary["d"] == 3
        assert summary["n_samples"] == 400
        assert 1 <= summary["predicted_max_modes"] <= 3
        table = (out / "waterfill_table.csv").read_text().strip().split("\n")
        assert table[0] == "mode,variance,distortion,gain,noise_var,active"
        assert len(table) == 4


class TestCommands:
    def test_waterfill_command(self, tmp_path, capsys):
        spec_path = write(tmp_path / "spec.csv", "4.0\n2.0\n")
        assert main(["waterfill", "--spectrum", spec_path, "--rate", "1.0"]) == 0
        out = capsys.readouterr().out
        assert "water_level=1.414213" in out
        assert "active=2/2" in out

    def test_predict_synthetic(self, capsys):
        code = main(["predict", "--power-law-d", "64", "--epsilon", "0.1",
                     "--warmup-time", "1000000", "--rate", "14"])
        assert code == 0
        out = capsys.readouterr().out
        assert "predicted_max_modes=21" in out

    def test_predict_from_file(self, tmp_path, capsys):
        spec_path = write(tmp_path / "spec.csv", "1.0\n0.25\n")
        assert main(["predict", "--spectrum", spec_path, "--rate", "0.5", "--table"]) == 0
        out = capsys.readouterr().out
        assert "predicted_max_modes=1" in out
        assert "mode,variance" in out

    def test_advise_command(self, tmp_path, capsys):
        series = write(tmp_path / "series.csv", "1,2\n2,5\n3,7\n4,7\n5,7\n")
        assert main(["advise", "--series", series, "--patience", "2", "--tol", "0.0"]) == 0
        out = capsys.readouterr().out
        assert "switch_time=3" in out
        assert "converged" in out

    def test_preset_configs_parse(self):
        for name in ("fig4", "fig6", "collapse-demo"):
            cfg = load_config(f"configs/{name}.cfg")
            from vqcollapse.cli import build_cells

            cells = build_cells(cfg)
            assert cells

    def test_ae_mode_run(self, tmp_path):
        out = tmp_path / "out"
        cfg_text = f"""
[experiment]
mode = ae
output_dir = {out}
svg = true

[spectrum]
kind = power-law
d = 4
exponent = 1.0

[ae]
init_scale = 0.01
dt = 0.01
steps = 2000
record_every = 100
"""
        path = write(tmp_path / "ae.cfg", cfg_text)
        assert main(["run", path]) == 0
        summary = json.loads((out / "summary.json").read_text())["ae"]
        assert summary["final_L_rec"] < 0.5
        assert (out / "ae_trajectory.csv").exists()
        assert (out / "plotdata.csv").exists()

    def test_toyvq_mode_run_with_codebook_export(self, tmp_path):
        out = tmp_path / "out"
        cfg_text = f"""
[experiment]
mode = toyvq
output_dir = {out}

[spectrum]
kind = power-law
d = 4
exponent = 1.0

[toyvq]
codebook_sizes = 8
warmup_steps = 20
beta = 1.0
learning_rate = 0.05
batch_size = 64
total_steps = 120
seed = 0
kmeans_iters = 10
init_scale = 0.05
record_every = 40
"""
        path = write(tmp_path / "vq.cfg", cfg_text)
        assert main(["run", path]) == 0
        codebook = np.loadtxt(out / "toyvq_K8_warm20_codebook.csv", delimiter=",")
        assert codebook.shape == (8, 4)
        summary = json.loads((out / "summary.json").read_text())["toyvq_K8_warm20"]
        assert 0.0 <= summary["utilization"] <= 1.0
