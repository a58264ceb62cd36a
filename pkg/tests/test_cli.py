import csv

import numpy as np
import pytest

from satpredist.channel import HpaModel
from satpredist.cli import main
from satpredist.config import ConfigFileError, load_channel_config, load_experiment
from satpredist.volterra import load_kernels


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "chan.cfg").write_text("# default transponder\nrolloff = 0.1\nibo_db = 3   # dB\nosf = 8\n")
    return tmp_path


def write(path, text):
    path.write_text(text)
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_channel_file_with_tables(tmp_path):
    h = HpaModel()
    r = np.linspace(0, 2, 81)
    np.savetxt(tmp_path / "amam.txt", np.c_[r, h.am_am(r)])
    np.savetxt(tmp_path / "ampm.txt", np.c_[r, np.rad2deg(h.am_pm(r))])
    write(tmp_path / "c.cfg", "hpa_am_am = amam.txt\nhpa_am_pm = ampm.txt\nflat_mux = yes\n")
    cfg = load_channel_config(tmp_path / "c.cfg")
    assert cfg.flat_mux and cfg.hpa.kind == "table"
    assert cfg.hpa.am_pm(np.array([0.5]))[0] == pytest.approx(h.am_pm(0.5), abs=1e-3)


def test_channel_file_errors(tmp_path):
    write(tmp_path / "c.cfg", "no_such_key = 1\n")
    with pytest.raises(ConfigFileError):
        load_channel_config(tmp_path / "c.cfg")
    write(tmp_path / "c.cfg", "hpa_am_am = missing.txt\n")
    with pytest.raises(ConfigFileError):
        load_channel_config(tmp_path / "c.cfg")
    with pytest.raises(ConfigFileError):
        load_channel_config(tmp_path / "absent.cfg")


def test_experiment_file(workdir):
    p = write(workdir / "e.cfg", "kind = convergence\nchannel = chan.cfg\nchannel.ibo_db = 5\nseed = 4\n"
                                 "delta_max = 0.05, 0.1\n")
    exp = load_experiment(p)
    assert exp.kind == "convergence" and exp.seed == 4 and exp.channel.ibo_db == 5.0
    assert exp.settings == {"delta_max": "0.05, 0.1"}
    with pytest.raises(ConfigFileError):
        load_experiment(p, "td_sweep")
    with pytest.raises(ConfigFileError):
        load_experiment(write(workdir / "b.cfg", "kind = nonsense\n"))


def test_identify_linear_config_gives_order_one(workdir):
    cfg = write(workdir / "id.cfg", "channel = chan.cfg\nchannel.ibo_db = 30\nmax_order = 1\nn_train = 2000\n"
                                    "n_test = 500\n")
    assert main(["identify", "--config", str(cfg), "--out", str(workdir / "o")]) == 0
    k = load_kernels(workdir / "o" / "kernels.txt")
    assert k.max_order == 1
    first = (workdir / "o" / "kernels.txt").read_bytes()
    assert main(["identify", "--config", str(cfg), "--out", str(workdir / "o")]) == 0
    assert (workdir / "o" / "kernels.txt").read_bytes() == first


def test_identify_higher_order_lowers_residual(workdir):
    res = {}
    for order in (1, 3):
        cfg = write(workdir / f"id{order}.cfg", f"channel = chan.cfg\nmax_order = {order}\nn_train = 3000\n"
                                                f"n_test = 1000\n")
        out = workdir / f"o{order}"
        assert main(["identify", "--config", str(cfg), "--out", str(out)]) == 0
        text = (out / "identify_summary.txt").read_text()
        res[order] = float(text.split("test_residual")[1].split()[0])
    assert res[3] < res[1]


def test_convergence_csv(workdir, capsys):
    cfg = write(workdir / "c.cfg", "kind = convergence\nchannel = chan.cfg\ndelta_max = 0.1, 0.4\nzf = on, off\n"
                                   "check_mode = per_step, per_iteration\nn_blocks = 1\nmax_iters = 2\n")
    out = workdir / "c"
    assert main(["convergence", "--config", str(cfg), "--out", str(out), "--n-override", "48"]) == 0
    r = rows(out / "convergence.csv")
    assert len(r) == 2 * 2 * 2 * 3
    assert list(r[0]) == ["delta_max", "zf", "check_mode", "iteration", "mse_db", "accepts", "rejects", "reverted"]
    for key in {(x["delta_max"], x["zf"], x["check_mode"]) for x in r}:
        curve = [float(x["mse_db"]) for x in r if (x["delta_max"], x["zf"], x["check_mode"]) == key]
        if key[2] == "per_step":
            assert all(b <= a + 1e-9 for a, b in zip(curve, curve[1:]))
    # six significant digits
    assert all(len(x["mse_db"].lstrip("-").replace(".", "")) <= 6 for x in r)
    first = (out / "convergence.csv").read_bytes()
    assert main(["convergence", "--config", str(cfg), "--out", str(out), "--n-override", "48",
                 "--threads", "2"]) == 0
    assert (out / "convergence.csv").read_bytes() == first
    assert "final_mse_db" in capsys.readouterr().out


def test_backend_loss_small(workdir):
    cfg = write(workdir / "b.cfg", "kind = backend_loss\nchannel = chan.cfg\nibo_db = 5\nlengths = 3\n"
                                   "n_blocks = 1\ntrain_blocks = 2\ntrain_block = 96\nmax_iters = 2\n")
    out = workdir / "b"
    assert main(["backend-loss", "--config", str(cfg), "--out", str(out), "--n-override", "64"]) == 0
    r = rows(out / "backend_loss.csv")
    assert [x["backend"] for x in r] == ["channel_sim", "lut", "reduced_volterra"]
    assert float(r[0]["loss_db"]) == 0


def test_td_sweep_small(workdir):
    cfg = write(workdir / "t.cfg", "kind = td_sweep\nchannel = chan.cfg\nibo_db = 8, 10\npredistorters = none, zf\n"
                                   "n_blocks = 1\nawgn_symbols = 20000\nmin_errors = 50\n")
    out = workdir / "t"
    assert main(["td-sweep", "--config", str(cfg), "--out", str(out), "--n-override", "5000"]) == 0
    for name in ("none", "zf"):
        lines = (out / f"td_{name}.csv").read_text().splitlines()
        assert lines[0] == "ibo_db,obo_db,omux_loss_db,req_nl_db,req_awgn_db,td_db"
        assert len(lines) == 3
    assert "predistorter" in (out / "td_sweep_summary.txt").read_text()


def test_cli_errors(workdir, capsys):
    assert main(["convergence", "--config", str(workdir / "missing.cfg"), "--out", str(workdir / "x")]) == 2
    bad = write(workdir / "bad.cfg", "kind = convergence\ndelta_max = abc\n")
    assert main(["convergence", "--config", str(bad), "--out", str(workdir / "x")]) == 2
    bad = write(workdir / "bad2.cfg", "kind = convergence\nunknown_setting = 1\n")
    assert main(["convergence", "--config", str(bad), "--out", str(workdir / "x")]) == 2
    assert main(["convergence", "--config", str(bad), "--threads", "0"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["no-such-verb"])


def test_keys_keep_their_case(tmp_path):
    cfg = tmp_path / "id.cfg"
    cfg.write_text("kind = identify\nmax_order = 1\nL1 = 0\nL2 = 2\nn_train = 500\nn_test = 200\n")
    from satpredist.cli import settings_for
    from satpredist.config import load_experiment
    st = settings_for(load_experiment(cfg), None)
    assert (st.L1, st.L2) == (0, 2)
