import numpy as np
import pytest

from rmqcredit.cli import main
from rmqcredit.config import ExperimentConfig, load_config, parse_config, parse_contract
from rmqcredit.errors import ConfigError
from rmqcredit.quantizer import load_tree

SMALL = "n_steps = 10\nt_n = 1.5\nsizes = 8\n"


def test_parse_and_defaults():
    cfg = parse_config("# comment\nsigma = 0.2  # inline\nsizes = 10, 20\nnewton = off\n")
    assert cfg.sigma == 0.2 and cfg.sizes == (10, 20) and cfg.newton is False
    assert cfg.mu == ExperimentConfig().mu
    assert cfg.dt == pytest.approx(0.02)


@pytest.mark.parametrize("text,line", [
    ("sigma = 0.1\nbogus\n", 2),
    ("mu = 0.1\n\nfoo = 1\n", 3),
    ("mu = 0.1\nmu = 0.2\n", 2),
    ("mu = abc\n", 1),
    ("sizes =\n", 1),
    ("x0 = 86\nbarrier = 90\n", 2),
    ("seed = -1\n", 1),
])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_contract_keys_only():
    cfg = parse_contract("ta = 1\ntb = 2\nspread_bps = 50\n")
    assert (cfg.ta, cfg.tb, cfg.spread_bps) == (1.0, 2.0, 50.0)
    with pytest.raises(ConfigError):
        parse_contract("sigma = 0.1\n")


def test_digest_ignores_output_path():
    a = parse_config("out = a.csv\n")
    b = parse_config("out = b.csv\n")
    assert a.digest() == b.digest() != parse_config("seed = 1\n").digest()


def test_time_grid_must_align():
    cfg = parse_config("n_steps = 10\nt_n = 1.55\n")
    with pytest.raises(ConfigError):
        cfg.time_grid()


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def test_quantize_is_deterministic(small_cfg, tmp_path, capsys):
    a, b = tmp_path / "a.tree", tmp_path / "b.tree"
    assert main(["quantize", "--config", small_cfg, "--out", str(a)]) == 0
    assert main(["quantize", "--config", small_cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    cfg = load_config(small_cfg)
    assert f"config_hash=" in a.read_text()
    tree = load_tree(a, cfg.spec())
    assert tree.grid_sizes.tolist() == [1] + [8] * 15
    d = tree.distortions[1:]
    assert np.all(d > 0)


def test_fbar_convergence_output(small_cfg, tmp_path):
    out = tmp_path / "f.csv"
    (tmp_path / "c2.cfg").write_text(SMALL.replace("sizes = 8", "sizes = 8, 16"))
    assert main(["fbar-convergence", "--config", str(tmp_path / "c2.cfg"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# rmqcredit fbar-convergence"
    assert lines[1].startswith("# config_hash=")
    rows = [l for l in lines if l and not l.startswith("#")][1:]
    assert len(rows) == 2 * 5          # t_n in {1.1, ..., 1.5}
    sup = [l for l in lines if l.startswith("# sup_error")]
    assert len(sup) == 2


def test_default_prob_output(small_cfg, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["default-prob", "--config", small_cfg, "--seed", "7", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", comments="#", skiprows=3)
    assert np.all((data[:, 1:] >= 0) & (data[:, 1:] <= 1))
    assert np.all(data[:, 2] <= data[:, 1] + 1e-12)
    obs = tmp_path / "p_observations.csv"
    assert obs.exists()
    first = out.read_bytes()
    assert main(["default-prob", "--config", small_cfg, "--seed", "7", "--out", str(out)]) == 0
    assert out.read_bytes() == first
    # feeding the observations back reproduces the probabilities
    cfg2 = tmp_path / "obs.cfg"
    cfg2.write_text(SMALL + f"observations = {obs}\n")
    out2 = tmp_path / "q.csv"
    assert main(["default-prob", "--config", str(cfg2), "--seed", "7", "--out", str(out2)]) == 0
    again = np.loadtxt(out2, delimiter=",", comments="#", skiprows=3)
    assert np.allclose(again, data, rtol=1e-9)


def test_cds_par_and_contract(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_steps = 5\nsizes = 6\nsizes_after = 6\nsigma = 0.2\n")
    contract = tmp_path / "k.txt"
    contract.write_text("lgd = 0.5\n")
    out = tmp_path / "s.csv"
    assert main(["cds-par", "--config", str(cfg), "--contract", str(contract), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", comments="#", skiprows=3)
    assert data.shape == (16, 5)
    assert np.all(data[:, 2] >= 0)


def test_exit_codes(tmp_path, small_cfg, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mu = 0.1\nnot a pair\n")
    assert main(["quantize", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["quantize", "--config", str(tmp_path / "missing.cfg")]) == 4
    assert main(["quantize", "--config", small_cfg, "--out", str(tmp_path / "no" / "dir" / "t")]) == 4
    assert main(["default-prob", "--config", small_cfg, "--seed", str(2 ** 64)]) == 2
    assert main(["quantize", "--config", small_cfg, "--threads", "0"]) == 2
    obs = tmp_path / "y.csv"
    obs.write_text("time,value\n0,86.3\n0.13,86\n")
    cfg = tmp_path / "o.cfg"
    cfg.write_text(SMALL + f"observations = {obs}\n")
    assert main(["default-prob", "--config", str(cfg)]) == 3
