"""End-to-end command-line flows on deliberately coarse configurations."""
import configparser
import json
import shutil

import numpy as np
import pytest

from bergmanlab import cli
from bergmanlab.errors import ConfigError
from bergmanlab.harness import CSV_COLUMNS

CHEAP_CFG = """\
[dyadic]
disc_max_level = 5

[grid]
disc_radial = 16
disc_angular = 32

[projection]
disc_truncation = 12

[domination]
directions = 8
polys = 2
samples = 20

[sweep]
rh_tents = 3
square_fields = 1

[output]
cache_dir = {cache_dir}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A config file plus a built disc cache, shared by the cheap CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cache = root / "caches"
    cfg = root / "cheap.cfg"
    cfg.write_text(CHEAP_CFG.format(cache_dir=cache))
    assert cli.main(["--config", str(cfg), "dyadic", "build",
                     "--geom", "disc"]) == 0
    return root, cfg, cache


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_print_config_roundtrip(capsys):
    assert cli.main(["--print-config"]) == 0
    text = capsys.readouterr().out
    parser = configparser.ConfigParser()
    parser.read_string(text)
    assert set(parser.sections()) == {"geometry", "dyadic", "grid",
                                      "projection", "domination", "sweep",
                                      "output", "seeds"}
    assert parser.get("grid", "disc_radial") == "64"
    assert parser.get("dyadic", "shifts").replace(" ", "") == "0,1/3,2/3"


def test_print_config_reflects_file(workdir, capsys):
    _, cfg, _ = workdir
    assert cli.main(["--config", str(cfg), "--print-config"]) == 0
    out = capsys.readouterr().out
    assert "disc_radial = 16" in out
    assert "disc_max_level = 5" in out


def test_load_config_rejects_bad_values(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[grid]\ndisc_radial = 4\n")
    with pytest.raises(ConfigError, match="at least 8"):
        cli.load_config(bad)
    assert cli.main(["--config", str(bad), "norm"]) == 2


def test_load_config_rejects_off_grading(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[grid]\ndisc_radial = 30\n")
    with pytest.raises(ConfigError, match="grading"):
        cli.load_config(bad)


def test_rows_section_parsing(tmp_path):
    cfg = tmp_path / "rows.cfg"
    cfg.write_text("[rows]\n"
                   "row0 = disc, scalar_power, 0.5, 0.0, 1\n"
                   "row1 = ball2, scalar_power, -0.3, 0.0, 1\n")
    loaded = cli.load_config(cfg)
    assert loaded.rows == (("disc", "scalar_power", 0.5, 0.0, 1),
                           ("ball2", "scalar_power", -0.3, 0.0, 1))


def test_rows_section_rejects_short_rows(tmp_path):
    cfg = tmp_path / "rows.cfg"
    cfg.write_text("[rows]\nrow0 = disc, scalar_power, 0.5\n")
    with pytest.raises(ConfigError, match="needs geometry"):
        cli.load_config(cfg)


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.cfg"), "b2"]) == 2


# ---------------------------------------------------------------------------
# usage errors
# ---------------------------------------------------------------------------

def test_no_command_prints_usage(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_1():
    with pytest.raises(SystemExit) as exc:
        cli.main(["transmogrify"])
    assert exc.value.code == 1


def test_bad_flag_value_exits_1():
    with pytest.raises(SystemExit) as exc:
        cli.main(["norm", "--kind", "Pminus"])
    assert exc.value.code == 1


# ---------------------------------------------------------------------------
# dyadic cache lifecycle
# ---------------------------------------------------------------------------

def test_dyadic_build_wrote_nine_systems(workdir, capsys):
    root, cfg, cache = workdir
    files = sorted(cache.glob("disc_*.npz"))
    assert len(files) == 9
    assert cli.main(["--config", str(cfg), "dyadic", "check",
                     "--geom", "disc", "--out", str(cache)]) == 0
    out = capsys.readouterr().out
    assert "check ok systems=9" in out


def test_dyadic_check_missing_cache(workdir, tmp_path, capsys):
    _, cfg, _ = workdir
    empty = tmp_path / "nothing"
    empty.mkdir()
    assert cli.main(["--config", str(cfg), "dyadic", "check",
                     "--geom", "disc", "--out", str(empty)]) == 2
    assert "dyadic build" in capsys.readouterr().err


def test_dyadic_check_stale_levels(workdir, capsys):
    _, cfg, cache = workdir
    assert cli.main(["--config", str(cfg), "dyadic", "check", "--geom",
                     "disc", "--out", str(cache), "--levels", "7"]) == 2
    err = capsys.readouterr().err
    assert "max_level" in err


def test_dyadic_check_corrupt_file(workdir, tmp_path, capsys):
    _, cfg, cache = workdir
    broken = tmp_path / "broken"
    shutil.copytree(cache, broken)
    victim = sorted(broken.glob("disc_*.npz"))[0]
    victim.write_bytes(victim.read_bytes()[:100])
    assert cli.main(["--config", str(cfg), "dyadic", "check",
                     "--geom", "disc", "--out", str(broken)]) == 2


# ---------------------------------------------------------------------------
# result commands
# ---------------------------------------------------------------------------

def test_b2_result_line(workdir, capsys):
    _, cfg, _ = workdir
    assert cli.main(["--config", str(cfg), "b2", "--weight", "scalar_power",
                     "--alpha", "0.5"]) == 0
    assert capsys.readouterr().out.strip() == "B2 = 1.333333"


def test_b2_without_cache_names_build_command(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(CHEAP_CFG.format(cache_dir=tmp_path / "void"))
    assert cli.main(["--config", str(cfg), "b2"]) == 2
    assert "dyadic build" in capsys.readouterr().err


def test_norm_identity_line(workdir, capsys):
    _, cfg, _ = workdir
    assert cli.main(["--config", str(cfg), "norm"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("norm = ")
    assert float(line.split("=")[1]) == pytest.approx(1.0, abs=1e-4)


def test_norm_rejects_invalid_alpha(workdir, capsys):
    _, cfg, _ = workdir
    assert cli.main(["--config", str(cfg), "norm", "--weight", "scalar_power",
                     "--alpha", "1.5"]) == 2
    assert "B2-finite" in capsys.readouterr().err


def test_norm_writes_result_file(workdir, tmp_path, capsys):
    _, cfg, _ = workdir
    out = tmp_path / "norm.txt"
    assert cli.main(["--config", str(cfg), "norm", "--out", str(out)]) == 0
    capsys.readouterr()
    assert out.read_text().startswith("norm = ")


def test_dominate_emits_per_sample_csv(workdir, tmp_path, capsys):
    _, cfg, _ = workdir
    out = tmp_path / "dom.csv"
    assert cli.main(["--config", str(cfg), "dominate", "--geom", "disc",
                     "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("C = ")
    c_val = float(line.split("=")[1])
    rows = out.read_text().splitlines()
    assert rows[0] == "sample,re,im0,C"
    assert len(rows) == 21
    best = max(float(r.rsplit(",", 1)[1]) for r in rows[1:])
    assert best == pytest.approx(c_val, abs=5e-7)


def test_sweep_writes_csv_and_json(workdir, tmp_path, capsys):
    root, _, cache = workdir
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(CHEAP_CFG.format(cache_dir=cache)
                   + "\n[rows]\n"
                   "row0 = disc, scalar_power, 0.5, 0.0, 1\n"
                   "row1 = disc, scalar_power, -0.25, 0.0, 1\n")
    csv_path = tmp_path / "sweep.csv"
    json_path = tmp_path / "summary.json"
    assert cli.main(["--config", str(cfg), "sweep", "--out", str(csv_path),
                     "--json", str(json_path)]) == 0
    out = capsys.readouterr().out
    assert "sweep rows=2 ok=2 failed=0" in out
    lines = csv_path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    assert lines[1].startswith("disc:scalar_power,0.5,")
    summary = json.loads(json_path.read_text())
    assert set(summary) == {"fitted_exponent", "max_ratio_B2sq",
                            "max_ratio_B2_32", "failures"}
    assert summary["failures"] == []
    assert summary["max_ratio_B2sq"] < 2.0


def test_verify_single_criterion(workdir, tmp_path, capsys):
    _, cfg, _ = workdir
    report = tmp_path / "verify.json"
    assert cli.main(["--config", str(cfg), "verify", "--criteria", "1",
                     "--out", str(report)]) == 0
    out = capsys.readouterr().out
    assert "verify passed=1 failed=0 of=1" in out
    payload = json.loads(report.read_text())
    assert len(payload) == 1
    assert payload[0]["criterion"] == 1
    assert payload[0]["passed"] is True
