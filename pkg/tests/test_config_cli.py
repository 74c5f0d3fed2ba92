import json
import os

import numpy as np
import pytest

from foovb import cli
from foovb import config as fc
from foovb import posterior as pst
from foovb.errors import ConfigError


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- config parsing ------------------------------------------------------------

def test_profile_then_overrides_regardless_of_order(tmp_path):
    cfg = fc.load_config(write(tmp_path, "seed = 7\nprofile = desk-small\nk_train = 3\n"))
    assert cfg.k_train == 3 and cfg.seed == 7
    assert cfg.sigma_init == 0.047 and cfg.num_tasks == 3
    assert cfg.layer_sizes == (64, 32, 32, 10)


def test_comments_blank_lines_and_types(tmp_path):
    text = "# header\n\nlayer_sizes = 64, 16, 10  # inline\nsgd_baseline = yes\nalpha = 0.25\n"
    cfg = fc.load_config(write(tmp_path, text))
    assert cfg.layer_sizes == (64, 16, 10) and cfg.sgd_baseline is True and cfg.alpha == 0.25


@pytest.mark.parametrize("text, line, needle", [
    ("seed = 1\nbogus = 3\n", 2, "unknown key"),
    ("seed = 1\nseed = 2\n", 2, "duplicate"),
    ("\n\nk_train = many\n", 3, "k_train"),
    ("no equals sign\n", 1, "key = value"),
    ("profile = nope\n", 1, "unknown profile"),
    ("seed = 0\nvariant = sparse\n", 2, "variant"),
])
def test_config_errors_carry_file_and_line(tmp_path, text, line, needle):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        fc.load_config(path)
    assert info.value.line == line and info.value.path == path
    assert f"{path}:{line}:" in str(info.value) and needle in str(info.value)


def test_input_width_must_match_images(tmp_path):
    with pytest.raises(ConfigError, match="pixels"):
        fc.load_config(write(tmp_path, "profile = desk-small\nsynth_side = 6\n"))


def test_from_dict_rejects_unknown_keys():
    data = fc.from_profile("desk-small").to_dict()
    data["surprise"] = 1
    with pytest.raises(ConfigError, match="surprise"):
        fc.RunConfig.from_dict(data)


@pytest.mark.parametrize("name", sorted(fc.PROFILES))
def test_profiles_build_and_round_trip_through_text(tmp_path, name):
    cfg = fc.from_profile(name)
    assert fc.load_config(write(tmp_path, cfg.to_text())) == cfg
    assert fc.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize("path", sorted(os.listdir(os.path.join(os.path.dirname(__file__),
                                                                 "..", "configs"))))
def test_shipped_configs_parse(path):
    here = os.path.join(os.path.dirname(__file__), "..", "configs", path)
    assert fc.load_config(here).profile


# -- run -------------------------------------------------------------------------

def tiny_config(tmp_path, **extra):
    lines = ["profile = desk-small", "num_tasks = 2", "iters_per_task = 30", "eval_every = 0",
             "synth_train = 200", "synth_test = 100", f"output_dir = {tmp_path / 'out'}"]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    return write(tmp_path, "\n".join(lines) + "\n")


def test_run_missing_config_exits_2_naming_path(tmp_path, capsys):
    path = str(tmp_path / "absent.cfg")
    assert cli.main(["run", path]) == 2
    assert path in capsys.readouterr().err


def test_run_writes_artifacts_and_summary_round_trips(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tiny_config(tmp_path, sgd_baseline="true")
    before = set(os.listdir(tmp_path))
    assert cli.main(["run", path]) == 0
    out = tmp_path / "out"
    names = set(os.listdir(out))
    assert {"metrics.csv", "summary.json", "checkpoint.npz", "timing.csv", "sigma_hist.csv",
            "baseline_metrics.csv"} <= names
    assert ".lock" not in names
    assert set(os.listdir(tmp_path)) == before | {"out"}
    summary = json.loads((out / "summary.json").read_text())
    assert fc.load_summary_config(out / "summary.json") == fc.load_config(path)
    assert summary["version"].startswith("0.1.0")
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "iteration,avg_seen_acc,first_task_acc,num_seen,task_acc,sigma_hist"


def test_run_rerun_is_byte_identical(tmp_path):
    path = tiny_config(tmp_path)
    assert cli.main(["run", path]) == 0
    first = (tmp_path / "out" / "metrics.csv").read_bytes()
    assert cli.main(["run", path]) == 0
    assert (tmp_path / "out" / "metrics.csv").read_bytes() == first


def test_run_refuses_locked_directory(tmp_path, capsys):
    path = tiny_config(tmp_path)
    os.makedirs(tmp_path / "out")
    (tmp_path / "out" / ".lock").write_text("1")
    assert cli.main(["run", path]) == 2
    assert "locked" in capsys.readouterr().err


def test_run_missing_idx_data_exits_2(tmp_path, monkeypatch):
    monkeypatch.delenv("FOOVB_DATA_DIR", raising=False)
    path = write(tmp_path, f"profile = mnist-discrete\noutput_dir = {tmp_path / 'o'}\n")
    assert cli.main(["run", path]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_numerical_abort_exits_3(tmp_path, monkeypatch):
    path = tiny_config(tmp_path, sigma_init="1e300")
    assert cli.main(["run", path]) == 3
    assert (tmp_path / "out" / "abort_checkpoint.npz").exists()


# -- verify ---------------------------------------------------------------------

def test_verify_filter_runs_one_suite(capsys):
    assert cli.main(["verify", "lemma1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("lemma1") and "PASS" in lines[0]


def test_verify_unknown_filter_lists_suites(capsys):
    assert cli.main(["verify", "lemma9"]) == 2
    err = capsys.readouterr().err
    assert all(name in err for name in ("lemma1", "lemma2", "kron", "taylor"))


# -- bench ----------------------------------------------------------------------

def test_bench_shape(capsys):
    code = cli.main(["bench", "--k", "2,4,8,16", "--iters", "20"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "k,seconds_per_iter"
    assert [ln.split(",")[0] for ln in lines[1:5]] == ["2", "4", "8", "16"]
    assert lines[5].startswith("fit slope=")
    r2 = lines[5].split("r2=")[1]
    assert len(r2.split(".")[1]) == 4
    assert code in (0, 1)


def test_bench_rejects_bad_k_list():
    with pytest.raises(SystemExit):
        cli.main(["bench", "--k", "0,2"])


# -- export-hist ---------------------------------------------------------------

def checkpoint(tmp_path, variant="diagonal"):
    post = pst.init_network(variant, (16, 8, 3), np.random.default_rng(0), 0.047, 0.5)
    path = str(tmp_path / f"{variant}.npz")
    pst.save_checkpoint(post, path)
    return path, post


def read_hist(text):
    rows = [r.split(",") for r in text.strip().splitlines()]
    assert rows[0] == ["bin_left", "bin_right", "count"]
    return [(float(a), float(b), int(c)) for a, b, c in rows[1:]]


def test_export_hist_fresh_checkpoint_single_bin(tmp_path, capsys):
    path, post = checkpoint(tmp_path)
    assert cli.main(["export-hist", path, "--bins", "10"]) == 0
    rows = read_hist(capsys.readouterr().out)
    counts = [c for _, _, c in rows]
    assert len(rows) == 10 and np.count_nonzero(counts) == 1
    assert sum(counts) == post.parts[0].mu.size


def test_export_hist_one_bin_to_file(tmp_path):
    path, post = checkpoint(tmp_path)
    out = tmp_path / "hist.csv"
    assert cli.main(["export-hist", path, "--bins", "1", "--output", str(out)]) == 0
    rows = read_hist(out.read_text())
    assert len(rows) == 1 and rows[0][2] == post.parts[0].mu.size


def test_export_hist_matrix_variate_exits_2(tmp_path, capsys):
    path, _ = checkpoint(tmp_path, "matrix_variate")
    assert cli.main(["export-hist", path]) == 2
    assert "diagonal" in capsys.readouterr().err
    assert cli.main(["export-hist", str(tmp_path / "missing.npz")]) == 2
