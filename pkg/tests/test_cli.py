import os

import pytest

from cutiga.cli import (ConfigError, RunConfig, main, parse_config_text, parse_overrides,
                        rows_to_csv)


def read_rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# schema=1"
    return lines[1:]


RAYLEIGH = ["rayleigh-tables", "--set", "s=2", "--set", "p=1", "--set", "probe=sliver1",
            "--set", "formulation=neumann"]


def test_rayleigh_example_exits_zero(tmp_path, capsys):
    assert main(RAYLEIGH + ["--set", "mass=lumped", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "rayleigh-tables.csv")
    header = rows[0].split(",")
    fitted = float(rows[1].split(",")[header.index("fitted")])
    assert fitted == pytest.approx(-1.0, abs=0.15)
    assert "PASS" in capsys.readouterr().out


def test_rod_example_writes_six_eigenvalues(tmp_path):
    code = main(["rod-spectrum", "--set", "chi=1e-4", "--set", "mass=consistent",
                 "--out", str(tmp_path)])
    assert code == 0
    assert len(read_rows(tmp_path / "rod-spectrum.csv")) == 1 + 6
    assert (tmp_path / "rod-spectrum_config.txt").exists()


def test_failing_verdict_exits_two(tmp_path):
    assert main(RAYLEIGH + ["--set", "tolerance=1e-9", "--out", str(tmp_path)]) == 2


def test_missing_config_is_one_line_error(tmp_path, capsys):
    assert main(["rod-spectrum", "--config", str(tmp_path / "nope.toml")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("cutiga: error:")


@pytest.mark.parametrize("argv", [
    ["rod-spectrum", "--set", "colour=blue"],
    ["rod-spectrum", "--set", "n_elements=-3"],
    ["rod-spectrum", "--set", "chi"],
    ["no-such-experiment"],
    [],
])
def test_bad_invocations_exit_one(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[:1] == ["rod-spectrum"] else [])) == 1
    assert not any(tmp_path.iterdir())


def test_failed_run_leaves_existing_outputs_alone(tmp_path):
    assert main(["rod-spectrum", "--out", str(tmp_path)]) == 0
    before = (tmp_path / "rod-spectrum.csv").read_text()
    assert main(["rod-spectrum", "--set", "p=0", "--out", str(tmp_path)]) == 1
    assert (tmp_path / "rod-spectrum.csv").read_text() == before
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".")]


def test_snapshot_round_trip_reproduces_rows(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["rod-spectrum", "--set", "chi=[1, 1e-3]", "--out", str(first)]) == 0
    # the snapshot names the first output directory; --out redirects the re-run
    assert main(["rod-spectrum", "--config", str(first / "rod-spectrum_config.txt"),
                 "--out", str(second)]) == 0
    assert (first / "rod-spectrum.csv").read_text() == (second / "rod-spectrum.csv").read_text()
    assert (first / "rod-spectrum_config.txt").read_text().replace(str(first), str(second)) == \
        (second / "rod-spectrum_config.txt").read_text()


def test_print_defaults_lists_every_key(capsys):
    assert main(["timestep-scaling", "--print-defaults"]) == 0
    text = capsys.readouterr().out
    for key in RunConfig("timestep-scaling").values:
        assert f"{key} =" in text


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("CUTIGA_OUT", str(tmp_path / "env"))
    assert main(["rod-spectrum", "--set", "chi=1", "--set", f"out={tmp_path / 'cfg'}"]) == 0
    assert (tmp_path / "env" / "rod-spectrum.csv").exists()
    assert main(["rod-spectrum", "--set", "chi=1", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "rod-spectrum.csv").exists()
    assert not (tmp_path / "cfg").exists()


def test_sections_scope_keys():
    text = "seed = 5\n[rod-spectrum]\np = 3\n[convergence]\np = 2\n"
    assert parse_config_text(text, "rod-spectrum") == {"seed": "5", "p": "3"}
    with pytest.raises(ConfigError):
        parse_config_text("[bogus]\n", "rod-spectrum")
    with pytest.raises(ConfigError):
        parse_config_text("[convergence]\nwidth = 1\n", "rod-spectrum")
    with pytest.raises(ConfigError):
        parse_config_text("just words\n", "rod-spectrum")


def test_values_are_coerced_to_default_types():
    cfg = RunConfig("rod-spectrum", {"p": "3", "chi": "1e-2, 1e-3", "mass": "lumped"})
    assert cfg["p"] == 3 and cfg["chi"] == [1e-2, 1e-3] and cfg["mass"] == ["lumped"]
    with pytest.raises(ConfigError):
        RunConfig("rod-spectrum", {"p": "two"})


def test_overrides_and_csv_header():
    assert parse_overrides(["a=1", "b = x=y"]) == {"a": "1", "b": " x=y"}
    assert rows_to_csv([{"a": 1.5}]).splitlines() == ["# schema=1", "a", "1.5"]
