import json
import subprocess
import sys

import pytest

from cihp.cli import load_spec, main, parse_spec, run
from cihp.model import ConfigError

TINY = """\
name = "tiny"
recipe = "ser_increase"
seed = 4
trials = 6

[system]
n_antennas = 8
n_rf_chains = 2
n_users = 2
thresholds = 1.0

[sweep]
delta_deg = [0, 6]
schemes = ["ci_nonrobust", "ci_robust"]
n_antennas = [8, 12]

[options]
tnr = 3.0
"""

TINY_BLOCK = """\
name = "tinyblock"
recipe = "block_power"
trials = 2

[system]
n_antennas = 8
n_rf_chains = 2
n_users = 2
coherence_symbols = 2

[sweep]
block_length = [1, 2]
analog_method = ["cpc", "bmcs"]

[options]
codebook_size = 8
"""


def write(tmp_path, text, name="spec.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_specs_parse():
    for name in ("fig5_desk.toml", "fig8_desk.toml"):
        spec = load_spec(name)
        assert spec.name == name[:-5] and len(spec.grid()) == 1


def test_dry_run_prints_grid(capsys, tmp_path):
    assert main(["run", str(write(tmp_path, TINY)), "--dry-run", "--out-dir", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "point 0: N=8" in out and "point 1: N=12" in out
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("bad, fragment", [
    (TINY.replace('recipe = "ser_increase"', 'recipe = "nope"'), "spec.toml:2:"),
    (TINY.replace("trials = 6", "trials = 0"), "spec.toml:4:"),
    (TINY.replace('"ci_robust"]', '"ci_psychic"]'), "unknown scheme"),
    (TINY.replace("tnr = 3.0", "tnr = -1.0"), "positive"),
    (TINY.replace("n_users = 2", "n_users = 3"), "RF chain per user"),
    (TINY + "bogus = 1\n", "bogus"),
])
def test_bad_spec_exits_2(capsys, tmp_path, bad, fragment):
    assert main(["run", str(write(tmp_path, bad))]) == 2
    assert fragment in capsys.readouterr().err


def test_missing_file_and_bad_flags(capsys, tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == 2
    assert main(["run", "fig5_desk.toml", "--jobs", "0"]) == 2
    assert main(["run", "fig5_desk.toml", "--seed", "-3", "--dry-run"]) == 2


def test_block_length_must_divide_coherence(capsys, tmp_path):
    assert main(["run", str(write(tmp_path, TINY_BLOCK.replace("[1, 2]", "[1, 3]")))]) == 2


def test_codebook_smaller_than_rf_chains(capsys, tmp_path):
    assert main(["run", str(write(tmp_path, TINY_BLOCK.replace("codebook_size = 8", "codebook_size = 1")))]) == 2
    assert "codebook" in capsys.readouterr().err


def test_parse_spec_error_carries_line():
    with pytest.raises(ConfigError) as info:
        parse_spec(TINY.replace("seed = 4", "seed = -4"), "x.toml")
    assert "x.toml" in str(info.value) and "3" in str(info.value)


def test_tiny_run_writes_csv_and_manifest(tmp_path):
    spec = parse_spec(TINY)
    assert run(spec, tmp_path, log=lambda *_: None) == 0
    text = (tmp_path / "tiny.csv").read_bytes().decode()
    lines = text.split("\r\n")
    assert lines[0].startswith("n_antennas,delta_deg,scheme,ser")
    assert len(lines) == 1 + 2 * 2 * 2 + 1
    man = json.loads((tmp_path / "tiny_manifest.json").read_text())
    assert man["seed"] == 4 and len(man["grid"]) == 2 and "tiny.csv" in man["artifacts"]
    assert "jobs" not in json.dumps(man)


def test_seed_override_changes_output(tmp_path):
    p = write(tmp_path, TINY)
    assert main(["run", str(p), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["run", str(p), "--seed", "9", "--out-dir", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "tiny_manifest.json").read_text())["seed"] == 9


def test_outputs_byte_identical_across_jobs(tmp_path):
    for text, name in ((TINY, "tiny"), (TINY_BLOCK, "tinyblock")):
        p = write(tmp_path, text, name + ".toml")
        for jobs in (1, 3):
            assert main(["run", str(p), "--jobs", str(jobs), "--out-dir", str(tmp_path / f"{name}{jobs}")]) == 0
        for suffix in (".csv", "_manifest.json"):
            a = (tmp_path / f"{name}1" / (name + suffix)).read_bytes()
            b = (tmp_path / f"{name}3" / (name + suffix)).read_bytes()
            assert a == b


def test_block_power_constancy_invariant(tmp_path):
    assert main(["run", str(write(tmp_path, TINY_BLOCK)), "--out-dir", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "tinyblock_manifest.json").read_text())
    assert man["invariants"] and all(c["passed"] for c in man["invariants"])


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cihp", "run", "fig8_desk.toml", "--dry-run"],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == 0 and "recipe block_power" in out.stdout
