import csv
import subprocess
import sys

import numpy as np
import pytest

from vfl.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ablation_configs, main
from vfl.config import config_from_items, parse_kv
from vfl.models import load_checkpoint
from vfl.training import build_system

SMALL_DATA = """
data.n_records = 120
data.d_i = 8
data.vocab = 16
data.K = 12
data.n_regions = 2
data.number_answers = 4
"""
SMALL_MODEL = SMALL_DATA + """
d_embed = 4
d_q = 8
d_f = 8
z_dim = 4
d_s = 16
code_dim = 6
attn_hidden = 8
g_hidden = 16,16,16
disc_hidden = 16,8
head_hidden = 16
batch = 8
pretrain_steps = 5
"""


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("VFL_SEED", raising=False)


def _write(path, text):
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ gen-data
def test_gen_data_counts_sum(tmp_path, capsys):
    cfg = _write(tmp_path / "d.cfg", "n_records = 1000\ntype_mix = 0.4,0.3,0.3\n")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d.jsonl")]) == EXIT_OK
    lines = dict(l.split(": ") for l in capsys.readouterr().out.splitlines() if ": " in l)
    assert int(lines["records"]) == 1000
    assert sum(int(lines[t]) for t in ("yes_no", "number", "other")) == 1000


def test_gen_data_is_byte_identical(tmp_path):
    cfg = _write(tmp_path / "d.cfg", "n_records = 50\nseed = 4\n")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["gen-data", "--config", cfg, "--out", str(a)])
    main(["gen-data", "--config", cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_bad_mix_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path / "d.cfg", "type_mix = 0.4,0.3,0.2\n")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "type mix" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path / "d.cfg", "n_recrods = 5\n")
    assert main(["gen-data", "--config", cfg]) == EXIT_CONFIG
    assert "n_recrods" in capsys.readouterr().err


# --------------------------------------------------------------------- train
def test_gan_train_writes_exactly_s_loss_rows(tmp_path):
    cfg = _write(tmp_path / "r.cfg", SMALL_MODEL + "method = gan\nnoise = N2\ninit = I1\n"
                 "steps = 7\npretrain_g = true\n")
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
    with open(out / "loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "L_D", "L_G", "saturation_count"]
    assert len(rows) - 1 == 7
    assert (out / "model.ckpt").exists() and (out / "eval.csv").exists()


def test_zero_steps_checkpoint_is_initialisation(tmp_path):
    text = SMALL_MODEL + "method = gan\nsteps = 0\n"
    cfg = _write(tmp_path / "r.cfg", text)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == EXIT_OK
    ck = load_checkpoint(tmp_path / "run" / "model.ckpt")
    rc = config_from_items(parse_kv(text))
    fresh = build_system(rc, rc.data.d_i, rc.data.vocab, rc.data.K)
    for p, t in zip(fresh.parameters(), ck.tensors):
        assert np.array_equal(p.data, t)


@pytest.mark.parametrize("method", ["g_classifier", "autoencoder", "attention"])
def test_rerun_gives_identical_breakdown(tmp_path, capsys, method):
    cfg = _write(tmp_path / "r.cfg", SMALL_MODEL + f"method = {method}\nsteps = 10\n")
    outs = []
    for k in range(2):
        main(["train", "--config", cfg, "--out", str(tmp_path / f"r{k}")])
        outs.append((tmp_path / f"r{k}" / "eval.csv").read_text())
    assert outs[0] == outs[1]


def test_nan_loss_exits_3(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", SMALL_MODEL + "method = g_classifier\nsteps = 50\n"
                 "alpha = 1e200\ninit = I2\n")
    with np.errstate(all="ignore"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == EXIT_NUMERIC
    assert "last good step" in capsys.readouterr().err


def test_eval_round_trip(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", SMALL_MODEL + "method = attention\nsteps = 5\n")
    main(["train", "--config", cfg, "--out", str(tmp_path / "run")])
    trained = (tmp_path / "run" / "eval.csv").read_text()
    out = tmp_path / "e.csv"
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"),
                 "--out", str(out)]) == EXIT_OK
    assert out.read_text() == trained


def test_eval_missing_checkpoint_exits_2(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt")]) == EXIT_CONFIG
    assert main(["eval"]) == EXIT_CONFIG


# -------------------------------------------------------------------- ablate
def test_preset_grid_sizes():
    configs, _ = ablation_configs({}, "table2")
    assert len(configs) == 4
    configs, _ = ablation_configs({}, "table1")
    assert len(configs) == 8
    kinds = {(c.method, c.arch if c.method in ("gan", "g_classifier") else c.combiner)
             for c in configs}
    assert {("g_classifier", "simp"), ("g_classifier", "full"), ("gan", "simp"), ("gan", "full"),
            ("autoencoder", "addition"), ("attention", "addition"),
            ("attention", "mcb")} <= kinds


def test_grid_axes_multiply():
    configs, seeds = ablation_configs(parse_kv("grid.noise = N0 | N1 | N2\ngrid.init = I1|I2\n"
                                               "seeds = 3,4\n"))
    assert len(configs) == 6 and seeds == [3, 4]


def _strip_wall(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("wall_ms")
    return [r[:col] + r[col + 1:] for r in rows]


def test_ablate_is_deterministic(tmp_path):
    spec = _write(tmp_path / "a.cfg", SMALL_MODEL + "preset = table2\nsteps = 3\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["ablate", "--config", spec, "--seeds", "0,1", "--jobs", "1",
                     "--out", str(out)]) == EXIT_OK
    rows = _strip_wall(a)
    assert len(rows) - 1 == 4 * 2
    assert rows == _strip_wall(b)


def test_ablate_bad_seeds_exit_2(tmp_path):
    spec = _write(tmp_path / "a.cfg", SMALL_MODEL)
    assert main(["ablate", "--config", spec, "--seeds", "x", "--out",
                 str(tmp_path / "r.csv")]) == EXIT_CONFIG


# ----------------------------------------------------------------- plot-data
def _results(path, n):
    header = ["method", "arch", "noise", "init", "pretrain_G", "pretrain_D", "combiner", "all",
              "yes_no", "number", "other", "seed", "steps", "wall_ms", "status"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            w.writerow(["gan", "full", "N2", "I1", i % 2, 0, "-", f"{i}.5", 1, 2, 3, i, 10, 5,
                        "ok"])
    return str(path)


def test_plot_data_writes_four_files(tmp_path):
    out = tmp_path / "plots"
    assert main(["plot-data", _results(tmp_path / "r.csv", 12), "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in out.iterdir())
    assert files == ["all.dat", "number.dat", "other.dat", "yes_no.dat"]
    lines = (out / "all.dat").read_text().splitlines()
    assert len(lines) == 13 and lines[1].split()[-1] == "0.5"


def test_plot_data_loss_logs(tmp_path):
    loss = tmp_path / "loss.csv"
    loss.write_text("step,L_D,L_G,saturation_count\n1,-1.3,-0.7,0\n")
    out = tmp_path / "plots"
    main(["plot-data", _results(tmp_path / "r.csv", 2), "--loss", str(loss), "--out", str(out)])
    assert (out / "loss_loss.dat").read_text().splitlines()[1] == "1 -1.3 -0.7 0"


def test_plot_data_empty_or_incomplete_exits_2(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["plot-data", str(empty)]) == EXIT_CONFIG
    partial = tmp_path / "p.csv"
    partial.write_text("method,seed,all\ngan,0,1.0\n")
    assert main(["plot-data", str(partial)]) == EXIT_CONFIG


# ---------------------------------------------------------------- entry point
def test_module_entry_point_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "vfl", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for cmd in ("gen-data", "train", "eval", "ablate", "plot-data", "gradcheck"):
        assert cmd in out


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--seeds", "0"]) == EXIT_OK
    assert "components pass over 1 seeds" in capsys.readouterr().out
