import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadcool import cli
from quadcool.config import ConfigError, apply_overrides, parse_config, parse_value, serialize_config
from quadcool.experiments import ScanConfig

TWO_PI = 2 * np.pi
TINY = ["scan.detuning_points=3", "scan.detuning_start=-3 MHz", "scan.detuning_stop=1 MHz",
        "scan.window=0.5 ms", "scan.trials=2", "ions.n_ions=2"]


def _sets(items):
    out = []
    for it in items:
        out += ["--set", it]
    return out


# -- parsing ------------------------------------------------------------------------

def test_empty_config_is_preset():
    cfg = parse_config("")
    assert cfg == ScanConfig()
    assert cfg.power_729 == 0.25 and cfg.waist_729 == 50e-6
    assert cfg.power_854 == 1e-3 and cfg.waist_854 == 280e-6
    assert cfg.detuning_854 == pytest.approx(-TWO_PI * 100e6)
    assert cfg.window == 0.2 and cfg.efficiency == 3.6e-4
    assert cfg.omega_r == pytest.approx(TWO_PI * 0.95e6)


def test_unit_conversions():
    assert parse_value("-5 MHz", "frequency") == pytest.approx(-TWO_PI * 5e6)
    assert parse_value("1.2 G", "field") == pytest.approx(1.2e-4)
    assert parse_value("250 mW", "power") == pytest.approx(0.25)
    assert parse_value("50 um", "length") == pytest.approx(50e-6)
    assert parse_value("200 ms", "time") == pytest.approx(0.2)
    assert parse_value("0.1 eV", "energy") == pytest.approx(1.602176634e-20)
    cfg = parse_config("[scan]\nprofile_detuning = -5 MHz\n[lasers]\nbfield = 1.2 G\n")
    assert cfg.profile_detuning == pytest.approx(-TWO_PI * 5e6)
    assert cfg.bfield == pytest.approx(1.2e-4)


@pytest.mark.parametrize("text", [
    "[lasers]\npower_729 = 250\n",              # missing unit
    "[lasers]\npower_729 = 250 MHz\n",          # wrong unit
    "[lasers]\ncolour = red\n",                 # unknown key
    "[optics]\n",                               # unknown section
    "[lasers]\npower_729 = -1 mW\n",            # negative power
    "[lasers]\nwaist_729 = 0 um\n",             # zero waist
    "[scan]\ntrials = many\n",
    "[lasers]\npower_729 = 1 mW\npower_729 = 2 mW\n",
    "no section header\n",
])
def test_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides():
    cfg = parse_config("[scan]\ntrials = 3\n", ["scan.trials=7", "bfield=0.5 G", "ions.dark_index=1"])
    assert cfg.trials == 7 and cfg.dark_index == 1
    assert cfg.bfield == pytest.approx(0.5e-4)
    with pytest.raises(ConfigError):
        apply_overrides("", ["nonsense=1"])
    with pytest.raises(ConfigError):
        apply_overrides("", ["trials"])


finite = st.floats(1e-3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(p=finite, w=finite, d=st.floats(-1e3, 1e3), b=st.floats(0, 10), n=st.integers(1, 6),
       dark=st.one_of(st.none(), st.integers(0, 0)), trials=st.integers(1, 50), eff=st.floats(1e-6, 1.0),
       recoil=st.booleans(), geom=st.sampled_from(["co", "counter", "angled"]))
def test_round_trip(p, w, d, b, n, dark, trials, eff, recoil, geom):
    cfg = ScanConfig(power_729=p * 1e-3, waist_729=w * 1e-6, detuning_854=d * TWO_PI * 1e6, bfield=b * 1e-4,
                     n_ions=n, dark_index=dark, trials=trials, efficiency=eff, recoil=recoil, geometry=geom,
                     bfield_list=(0.0, b * 1e-4))
    assert parse_config(serialize_config(cfg)) == cfg


# -- commands -----------------------------------------------------------------------

def test_check(capsys):
    assert cli.run(["check"]) == 0
    out = capsys.readouterr().out
    assert "12.66" in out and "pass" in out and "Gamma'" in out


def test_missing_config(tmp_path, capsys):
    path = tmp_path / "absent.ini"
    assert cli.run(["scan", "--config", str(path)]) == 2
    assert str(path) in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[lasers]\npower_729 = 3\n")
    assert cli.run(["scan", "--config", str(path)]) == 2
    assert cli.run(["scan", "--set", "scan.window=1 MHz"]) == 2


def test_numerical_failure_exit_code(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise FloatingPointError("non-finite ion state")
    monkeypatch.setitem(cli.HANDLERS, "scan", boom)
    assert cli.run(["scan", "--out", str(tmp_path)]) == 3


def test_scan_outputs_and_determinism(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[scan]\nseed = 4\n")
    for d in ("a", "b"):
        args = ["scan", "--config", str(ini), "--out", str(tmp_path / d), "--gnuplot"] + _sets(TINY)
        assert cli.run(args) == 0
    a = (tmp_path / "a" / "scan.csv").read_bytes()
    assert a == (tmp_path / "b" / "scan.csv").read_bytes()
    assert a.decode().splitlines()[0].startswith("detuning_MHz,")
    assert (tmp_path / "a" / "scan.gp").exists()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 4 and man["command"] == "scan"
    assert parse_config(man["config"]).seed == 4
    assert "scan.csv" in man["outputs"] and man["started"] <= man["finished"]


def test_seed_flag_and_threads_env(tmp_path, monkeypatch):
    base = ["scan", "--seed", "3"] + _sets(TINY)
    assert cli.run(base + ["--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("QUADCOOL_THREADS", "2")
    assert cli.run(base + ["--out", str(tmp_path / "two")]) == 0
    assert (tmp_path / "one" / "scan.csv").read_text() == (tmp_path / "two" / "scan.csv").read_text()
    assert cli.run(base + ["--threads", "0", "--out", str(tmp_path / "x")]) == 2


def test_geometry_flag(tmp_path):
    assert cli.run(["scan", "--geometry", "counter", "--out", str(tmp_path)] + _sets(TINY)) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["result"]["geometry"] == "counter"


def test_force_profile_command(tmp_path):
    assert cli.run(["force-profile", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "force_profile.csv").read_text().splitlines()
    assert rows[0] == "v[m/s],F[N],D[kg^2 m^2/s^3]"
    v, f = np.loadtxt(tmp_path / "force_profile.csv", delimiter=",", skiprows=1, usecols=(0, 1)).T
    # red-detuned default: the force opposes motion near v = 0
    assert np.interp(0.1, v, f) < np.interp(-0.1, v, f)


def test_md_command(tmp_path):
    assert cli.run(["md", "--out", str(tmp_path)] + _sets(["scan.window=0.1 ms", "ions.n_ions=2"])) == 0
    assert (tmp_path / "states.csv").read_text().startswith("t,x0,")
    assert (tmp_path / "events.csv").read_text().startswith("t,ion,channel_nm\n")


def test_jumps_command(tmp_path):
    sets = ["scan.detuning_points=1", "scan.detuning_start=-3 MHz", "scan.window=0.2 ms",
            "scan.trials=20", "ions.n_ions=3"]
    assert cli.run(["jumps", "--out", str(tmp_path)] + _sets(sets)) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["result"]["baseline"]["trials"] == 20


def test_bfield_command(tmp_path):
    sets = TINY + ["scan.trials=1", "lasers.bfield_list=0, 1 G"]
    assert cli.run(["bfield", "--out", str(tmp_path)] + _sets(sets)) == 0
    rows = (tmp_path / "bfield_summary.csv").read_text().splitlines()
    assert rows[0].startswith("bfield_G,fwhm_MHz,peak_counts_per_s")
    assert len(rows) == 3
    assert float(rows[2].split(",")[0]) == pytest.approx(1.0)
    assert (tmp_path / "bfield_1.csv").exists()
