import dataclasses

import numpy as np
import pytest

from netinfer import cli, pipeline
from netinfer.config import (PRESETS, config_hash, grid_points, parse_config, preset_config,
                             run_seeds, to_ini)
from netinfer.errors import ConfigError, NumericError


# configuration -----------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_roundtrip_through_ini(name):
    cfg = preset_config(name)
    back = parse_config(to_ini(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_lorenz16_shape():
    cfg = preset_config("lorenz16")
    assert cfg.network.n_nodes == 16
    assert cfg.network.p == pytest.approx(np.log(16) / 16)
    assert cfg.simulate.dt == 0.02
    assert cfg.simulate.n_steps == 25000
    assert cfg.n_runs == 8


def test_partial_file_keeps_base_values():
    cfg = parse_config("[regression]\nn_refit = 3\n", base=preset_config("chua16"))
    assert cfg.regression.n_refit == 3
    assert cfg.system == "chua"
    assert cfg.network.n_nodes == 16


@pytest.mark.parametrize("text,line", [
    ("[experiment]\nseed = 1\n\n[network]\nn_nodes = many\n", 5),
    ("[experiment]\nsystem = lorenz\n[simulate]\ndt = -1\n", 4),
    ("[train]\nbogus = 1\n", 2),
])
def test_errors_report_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text, source="exp.ini")
    assert str(info.value).startswith(f"exp.ini:{line}:")


def test_unknown_section_and_system_rejected():
    with pytest.raises(ConfigError):
        parse_config("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nsystem = duffing\n")


def test_hash_changes_with_content():
    a = preset_config("lorenz16")
    b = a.replace(seed=a.seed + 1)
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 16


def test_zero_edge_probability_gives_decoupled_data():
    cfg = preset_config("smoke")
    cfg = cfg.replace(network=dataclasses.replace(cfg.network, edge_prob=0.0))
    models, C, observed, truth = pipeline.simulate_data(cfg)
    assert not np.any(C.weights)


def test_grid_expansion():
    noise = grid_points(preset_config("lorenz16-noise"))
    assert len(noise) == 6 * 8
    assert sorted({p.simulate.noise_xi for _, p, _ in noise}) == [0, 0.01, 0.02, 0.04, 0.07, 0.1]
    assert [i for _, _, i in noise] == list(range(48))
    hetero = grid_points(preset_config("chua16-hetero"))
    assert len({p.network.hetero_xi_alpha for _, p, _ in hetero}) == 7
    assert len({label for label, _, _ in hetero}) == len(hetero)


def test_run_seeds_are_independent_and_reproducible():
    a, b = run_seeds(5, 0), run_seeds(5, 0)
    assert all(a[k].random() == b[k].random() for k in a)
    draws = {k: g.random(4).tobytes() for k, g in run_seeds(5, 1).items()}
    other = {k: g.random(4).tobytes() for k, g in run_seeds(5, 2).items()}
    assert len(set(draws.values())) == len(draws)
    assert not set(draws.values()) & set(other.values())


def test_worker_count_validation(monkeypatch):
    monkeypatch.setenv("NETINFER_THREADS", "3")
    assert pipeline.worker_count() == 3
    for bad in ("0", "two"):
        monkeypatch.setenv("NETINFER_THREADS", bad)
        with pytest.raises(ConfigError):
            pipeline.worker_count()


# command line --------------------------------------------------------------------

def test_cli_full_run_and_determinism(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["reproduce", "--preset", "smoke", "--out", str(tmp_path / d)]) == 0
    for name in ("summary.csv", "run00/coupling.csv", "run00/trajectory.csv",
                 "run00/c_hat/iter_002.csv", "run00/report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_stages_and_seed_override(tmp_path, capsys):
    run = str(tmp_path / "r")
    for cmd in ("generate", "infer", "evaluate"):
        assert cli.main([cmd, "--preset", "smoke", "--seed", "4", "--out", run]) == 0
    assert (tmp_path / "r" / "report.json").exists()
    assert "seed,4" in (tmp_path / "r" / "coupling.csv").read_text().splitlines()[0]


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[network]\nn_nodes = -2\n")
    assert cli.main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["generate", "--preset", "nope", "--out", str(tmp_path)]) == 2
    assert cli.main(["generate", "--out", str(tmp_path)]) == 2
    assert cli.main(["infer", "--preset", "smoke", "--out", str(tmp_path / "empty")]) == 2


def test_cli_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["generate", "--preset", "smoke", "--out", str(blocker / "sub")]) == 4


def test_cli_numeric_error_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("diverged", step=3)

    monkeypatch.setattr(pipeline, "generate_run", boom)
    assert cli.main(["generate", "--preset", "smoke", "--out", str(tmp_path)]) == 3
