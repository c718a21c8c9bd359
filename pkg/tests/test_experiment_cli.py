import numpy as np
import pytest

from wavelab.artifacts import load_field, read_csv
from wavelab.experiment_cli import (
    DEFAULT_SEED,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    ConfigError,
    load_config,
    main,
)

SMALL_INVERT = """\
domain.nx = 30
domain.nt = 80
weight.s = 40
invert.max_iter = 4
"""

SMALL_VERIFY = """\
domain.nx = 30
domain.nt = 120
verify.s_list = 40, 80
verify.n_fields = 1
verify.n_potentials = 2
verify.decomposition_lams = 0.2
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "# nothing set\n"), "validate")
    assert cfg.domain.nx == 100 and cfg.params.beta == 0.75
    assert cfg.seed == DEFAULT_SEED
    assert load_config(write(tmp_path, ""), "invert").domain.t_lo == 0.0


def test_unknown_key_cites_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "domain.nx = 50\nweight.gamma = 3\n"), "validate")
    assert any("line 2" in e and "weight.gamma" in e for e in exc.value.errors)


def test_duplicate_and_malformed_lines(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "domain.nx = 50\ndomain.nx = 60\njunk\n"), "validate")
    text = " ".join(exc.value.errors)
    assert "line 2" in text and "duplicate" in text and "line 3" in text


def test_pseudoconvexity_violation_reports_margin(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "weight.beta = 0.6\n"), "validate")
    msg = [e for e in exc.value.errors if "pseudoconvexity" in e]
    assert msg and "-0.1" in msg[0]


def test_missing_files_are_named(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert main(["validate", "--config", str(missing), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert str(missing) in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "invert.flux_file = flux.csv\n"), "invert")
    assert any("flux.csv" in e for e in exc.value.errors)
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "forward.potential = file:absent.csv\n"), "forward")


def test_expression_evaluator_is_restricted(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "forward.init_pos = __import__('os').getcwd()\n"), "forward")
    cfg = load_config(write(tmp_path, "forward.init_pos = 2*sin(pi*x) + x**2\n"), "forward")
    x = np.array([0.25])
    assert cfg["forward.init_pos"](x) == pytest.approx(2 * np.sin(np.pi / 4) + 1 / 16)


def test_cfl_violation_is_a_validation_error(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "domain.nt = 150\n"), "forward")
    assert any("CFL" in e for e in exc.value.errors)


def test_validate_lists_conditions(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["validate", "--config", str(write(tmp_path, "")), "--out", str(out)]) == EXIT_OK
    text = (out / "validation.txt").read_text()
    for name in ("pseudoconvexity", "gamma_condition", "time_horizon", "alpha_interval"):
        assert name in text
    assert "pseudoconvexity" in capsys.readouterr().out


def test_invert_writes_monotone_iterations(tmp_path):
    out = tmp_path / "inv"
    assert main(["invert", "--config", str(write(tmp_path, SMALL_INVERT)), "--out", str(out)]) == EXIT_OK
    header, data = read_csv(out / "iterations.csv")
    assert data.shape[0] >= 1
    err = data[:, header.index("weighted_error_sq")]
    assert np.all(np.diff(err) < 0)
    assert (out / "potential.csv").exists() and (out / "summary.txt").exists()


def test_control_zero_target(tmp_path):
    cfg = "domain.nx = 30\ndomain.nt = 150\ncontrol.y0 = 0\ncontrol.s_list = 40\n"
    out = tmp_path / "c"
    assert main(["control", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    header, data = read_csv(out / "control.csv")
    assert data[0, header.index("terminal_energy")] == 0.0


def test_forward_outputs_and_field_dump(tmp_path):
    cfg = "domain.nx = 30\ndomain.nt = 150\n"
    out = tmp_path / "f"
    assert main(["forward", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    header, data = read_csv(out / "forward.csv")
    assert header == ["t", "flux_left", "flux_right", "energy"]
    field = load_field(out / "field.f64")
    assert field.shape == (151, 32)
    assert field[0] == pytest.approx(np.sin(np.pi * np.linspace(0, 1, 32)))


def test_seed_override_and_reloadable_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("WAVELAB_SEED", "7")
    out = tmp_path / "v"
    assert main(["validate", "--config", str(write(tmp_path, "run.seed = 3\n")), "--out", str(out)]) == EXIT_OK
    manifest = out / "manifest.txt"
    text = manifest.read_text()
    assert "run.seed = 7" in text and "# version:" in text and "# status: ok" in text
    again = load_config(manifest, "validate")
    assert again.seed == 7 and again.raw == load_config(manifest).raw


def test_bad_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("WAVELAB_SEED", "abc")
    assert main(["validate", "--config", str(write(tmp_path, "")), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_VERIFY)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["verify", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["verify", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    assert main(["verify", "--config", str(cfg), "--out", str(c), "--workers", "2"]) == EXIT_OK
    names = sorted(p.name for p in a.glob("*.csv"))
    assert names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes() == (c / n).read_bytes(), n


def test_numerical_failure_exit_code(tmp_path):
    # a strongly negative potential makes the discrete solution explode
    cfg = "domain.nx = 30\ndomain.nt = 150\nforward.potential = -1e7\n"
    out = tmp_path / "f"
    assert main(["forward", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == EXIT_NUMERICAL
    assert "numerical failure" in (out / "manifest.txt").read_text()


def test_mode_conflict(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "run.mode = invert\n"), "verify")
