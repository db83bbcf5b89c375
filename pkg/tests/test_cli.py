import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipcert import cli
from slipcert.config import ConfigError, RunConfig, build_model, loads_config

PRESET = """
[system.nonlinearity]
preset = "sine_minus_beta"
beta = 0.9

[system.linear_part]
preset = "pll_pi_filter"
T = 0.1
s = 0.4
h0 = 1.0

[task]
name = "certify"
theorem = "T3"
seed = 0
"""


@pytest.fixture
def preset_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(PRESET)
    return p


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_config_round_trip():
    cfg = loads_config(PRESET)
    assert loads_config(cfg.dumps()).data == cfg.data


@given(
    beta=st.floats(0.01, 1.0), T=st.floats(0.01, 1.0), s=st.floats(0.01, 0.99), h0=st.floats(0.0, 2.0),
    grid=st.lists(st.floats(0.1, 0.9), max_size=5), seed=st.integers(0, 2**31),
)
@settings(max_examples=50, deadline=None)
def test_round_trip_property(beta, T, s, h0, grid, seed):
    raw = {
        "system": {"nonlinearity": {"beta": beta}, "linear_part": {"preset": "pll_pi_filter", "T": T, "s": s, "h0": h0}},
        "task": {"name": "sweep", "seed": seed, "sweep": {"beta": grid}},
    }
    cfg = RunConfig.from_dict(raw)
    assert loads_config(cfg.dumps()).data == cfg.data


def test_unknown_key_reports_location():
    with pytest.raises(ConfigError) as exc:
        loads_config(PRESET + "\n[task.sweep]\nbogus = 1\n")
    assert exc.value.location == "task.sweep.bogus"
    with pytest.raises(ConfigError) as exc:
        loads_config('[system.linear_part]\nterms = [{num = [1.0], den = [1.0, 1.0], lag = 0.1}]\n')
    assert exc.value.location == "system.linear_part.terms[0].lag"


def test_type_errors_report_location():
    with pytest.raises(ConfigError) as exc:
        loads_config('[system.nonlinearity]\nbeta = "high"\n')
    assert exc.value.location == "system.nonlinearity.beta"
    with pytest.raises(ConfigError):
        loads_config("[task]\nname = 'fly'\n")
    with pytest.raises(ConfigError):
        loads_config("[task\n")


def test_build_general_model():
    cfg = loads_config(
        """
[system.nonlinearity]
preset = "tabulated"
sigma = [0.0, 1.5707963267948966, 3.141592653589793, 4.71238898038469, 6.283185307179586]
phi = [-0.5, 0.5, -0.5, -1.5, -0.5]
dphi = [1.0, 0.0, -1.0, 0.0, 1.0]

[system.linear_part]
terms = [{num = [1.0], den = [1.0, 2.0], delay = 0.1}]
rho = 0.1
h = 0.2
"""
    )
    model = build_model(cfg.system)
    assert model.example is None
    assert model.rho == pytest.approx(0.1)
    assert model.nonlinearity.kind == "tabulated"


def test_reproduce_paper(capsys):
    code, out, _ = run(["reproduce-paper"], capsys)
    assert code == 0
    assert "r0 matches" in out
    rows = [l.split() for l in out.splitlines() if l.strip().startswith("0.9")]
    assert [int(r[-1]) for r in rows] == [1, 2, 5]


def test_certify_verify_and_determinism(preset_file, tmp_path, capsys):
    code, out, _ = run(["certify", "--config", preset_file, "--out", tmp_path / "a", "--seed", 4], capsys)
    assert code == 0 and "slips < 2" in out
    code, _, _ = run(["certify", "--config", preset_file, "--out", tmp_path / "b", "--seed", 4], capsys)
    a = (tmp_path / "a" / "certificate.toml").read_bytes()
    assert a == (tmp_path / "b" / "certificate.toml").read_bytes()
    code, out, _ = run(["verify", "--certificate", tmp_path / "a" / "certificate.toml"], capsys)
    assert code == 0 and "VALID" in out


def test_verify_rejects_tampered_certificate(preset_file, tmp_path, capsys):
    run(["certify", "--config", preset_file, "--out", tmp_path], capsys)
    path = tmp_path / "certificate.toml"
    text = path.read_text().replace("k_bound = 2", "k_bound = 1")
    path.write_text(text)
    code, out, _ = run(["verify", "--certificate", path], capsys)
    assert code == 2 and "INVALID" in out


def test_certify_t4_reports_mu0(preset_file, tmp_path, capsys):
    code, out, _ = run(["certify", "--config", preset_file, "--out", tmp_path, "--theorem", "T4", "--mu", 0.1], capsys)
    assert code == 0
    assert "empirical mu0" in out
    assert "[mu_probe]" in (tmp_path / "certificate.toml").read_text()


def test_certify_no_certificate_exit_code(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text(PRESET.replace("beta = 0.9", "beta = 0.95") + "k_max = 2\n")
    code, out, _ = run(["certify", "--config", p, "--out", tmp_path], capsys)
    assert code == 2 and "best" in out


def test_malformed_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[system]\nunknown = 3\n")
    code, _, err = run(["certify", "--config", p], capsys)
    assert code == 1 and "system.unknown" in err
    code, _, _ = run(["certify"], capsys)
    assert code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["nope"])
    assert exc.value.code == 1


def test_simulate_writes_csv(preset_file, tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", preset_file, "--out", tmp_path, "--horizon", 2.0], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
    assert len(rows) == 401 and float(rows[-1]["t"]) == pytest.approx(2.0)
    code, _, _ = run(["simulate", "--config", preset_file, "--out", tmp_path, "--step", 0.05], capsys)
    assert code == 1


def test_simulate_singular(preset_file, tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", preset_file, "--out", tmp_path, "--mu", 0.01, "--horizon", 1.0], capsys)
    assert code == 0 and "singular" in out


def test_sweep_monotone_in_beta(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text(PRESET + "\n[task.sweep]\nbeta = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]\nn_inits = 3\n")
    code, out, _ = run(["sweep", "--config", p, "--out", tmp_path, "--jobs", 2], capsys)
    assert code == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    rows = list(csv.DictReader([l for l in lines if not l.startswith("#")]))
    ks = [int(r["certified_k"]) for r in rows]
    assert ks == sorted(ks)
    assert all(int(r["empirical_max_slips"]) <= int(r["max_slips_bound"]) for r in rows)
    assert "# monotone_in_beta,true" in lines


def test_sweep_empty_grid(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text(PRESET + "\n[task.sweep]\nbeta = []\n")
    code, _, _ = run(["sweep", "--config", p, "--out", tmp_path], capsys)
    assert code == 0
    assert (tmp_path / "sweep.csv").read_text().splitlines() == [",".join(cli.SWEEP_HEADER)]


def test_sweep_records_failures(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text(PRESET + "\n[task.sweep]\nbeta = [0.9, 1.0]\n")
    code, _, _ = run(["sweep", "--config", p, "--out", tmp_path], capsys)
    assert code == 0
    text = (tmp_path / "sweep.csv").read_text()
    assert "failed: NoCertificate" in text


def test_dump_fdi(preset_file, tmp_path, capsys):
    target = tmp_path / "f.csv"
    code, out, _ = run(["dump-fdi", "--config", preset_file, "--dump-fdi", target], capsys)
    assert code == 0 and "holds" in out
    assert target.read_text().startswith("omega,fdi_value\n")


def test_env_output_dir(preset_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    code, _, _ = run(["simulate", "--config", preset_file, "--horizon", 1.0], capsys)
    assert code == 0 and (tmp_path / "env" / "trajectory.csv").exists()


def test_monotonicity_summary_detects_violation():
    rows = [
        {"beta": b, "T": 0.1, "h0": 1.0, "s": 0.4, "status": "ok", "certified_k": k}
        for b, k in ((0.5, 1), (0.6, 3), (0.7, 2))
    ]
    assert cli.monotonicity_summary(rows, ["beta"]) == {"beta": False}
    rows[2]["status"] = "failed: NoCertificate"
    assert cli.monotonicity_summary(rows, ["beta"]) == {"beta": True}
