import json

import numpy as np
import pytest

from emachine.cli import main, parse_grid, ConfigError
from emachine.io import read_spins


@pytest.fixture()
def dataset(tmp_path):
    out = tmp_path / "d.spins"
    assert main(["generate", "--M", "6", "--N", "2000", "--preset", "weak", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_parse_grid():
    assert parse_grid("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
    assert parse_grid("0.5,0.7") == [0.5, 0.7]
    with pytest.raises(ConfigError):
        parse_grid("0.3:0.1:0.1")
    with pytest.raises(ConfigError):
        parse_grid("a:b:c")


def test_generate_writes_dataset_and_sidecar(dataset):
    ens = read_spins(dataset)
    assert ens.M == 6 and ens.N == 2000
    side = json.loads((dataset.parent / "d.spins.truth.json").read_text())
    assert len(side["w_true"]) == 21 and side["spec"]["seed"] == 3


def test_generate_is_byte_identical(tmp_path):
    args = ["generate", "--M", "5", "--N", "500", "--sampler", "exact", "--seed", "1"]
    main(args + ["--out", str(tmp_path / "a.spins")])
    main(args + ["--out", str(tmp_path / "b.spins")])
    assert (tmp_path / "a.spins").read_bytes() == (tmp_path / "b.spins").read_bytes()
    a = (tmp_path / "a.spins.truth.json").read_bytes()
    assert a == (tmp_path / "b.spins.truth.json").read_bytes()


@pytest.mark.parametrize("method", ["em", "hopfield", "mle", "ple"])
def test_fit_methods(dataset, tmp_path, method):
    out = tmp_path / f"{method}.json"
    assert main(["fit", "--dataset", str(dataset), "--method", method, "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["method"] == method and len(d["w"]) == 21 and d["mse"] >= 0


def test_fit_trajectory(dataset, tmp_path):
    traj = tmp_path / "t.csv"
    assert main(["fit", "--dataset", str(dataset), "--epsilon", "0.4", "--out", str(tmp_path / "f.json"),
                 "--trajectory", str(traj)]) == 0
    lines = traj.read_text().splitlines()
    assert lines[0] == "iteration,mean_energy" and len(lines) > 2


def test_scan_json_and_csv(dataset, tmp_path):
    assert main(["scan", "--dataset", str(dataset), "--grid", "0.2:1.0:0.2", "--out", str(tmp_path / "s.json")]) == 0
    d = json.loads((tmp_path / "s.json").read_text())
    assert d["selected_eps"] in d["grid"] and len(d["per_eps"]) == 5
    assert main(["scan", "--dataset", str(dataset), "--grid", "0.5,1.0", "--format", "csv",
                 "--out", str(tmp_path / "s.csv")]) == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0].startswith("epsilon,") and len(rows) == 3


def test_bench_and_time_csv(tmp_path):
    common = ["--sizes", "5", "--presets", "weak", "--replicates", "1", "--grid", "0.4,0.8", "--seed", "2"]
    assert main(["bench", "--N", "200", *common, "--out", str(tmp_path / "b.csv")]) == 0
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "M,N,preset,method,replicate,mse,seconds,iters,epsilon_star"
    assert len(lines) == 1 + 4
    assert main(["time", "--N", "300", *common, "--methods", "em,ple", "--format", "json",
                 "--out", str(tmp_path / "t.json")]) == 0
    recs = json.loads((tmp_path / "t.json").read_text())
    assert {r["method"] for r in recs} == {"em", "ple"} and all(r["seconds"] > 0 for r in recs)


def test_reconstruct_synthetic(tmp_path):
    out = tmp_path / "rec"
    assert main(["reconstruct", "--synthetic", "--n-train", "200", "--n-test", "3", "--missing", "20",
                 "--epsilon", "0.5", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["images"]) == 3 and rep["settings"]["source"] == "synthetic-glyphs"
    assert (out / "recon_0000.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")


def test_reconstruct_idx_files(tmp_path):
    from emachine.recon import synthetic_glyphs, write_idx

    imgs = synthetic_glyphs(150, seed=5)
    labels = np.array([8, 3] * 75, dtype=np.uint8)
    for name, arr in (("tr.idx", imgs), ("trl.idx", labels), ("te.idx", imgs[:10]), ("tel.idx", labels[:10])):
        write_idx(tmp_path / name, arr)
    out = tmp_path / "rec"
    assert main(["reconstruct", "--images", str(tmp_path / "tr.idx"), "--labels", str(tmp_path / "trl.idx"),
                 "--test-images", str(tmp_path / "te.idx"), "--test-labels", str(tmp_path / "tel.idx"),
                 "--missing", "10", "--epsilon", "0.5", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["settings"]["n_train"] == 75 and len(rep["images"]) == 5


def test_exit_codes(tmp_path, dataset):
    assert main(["fit", "--dataset", str(tmp_path / "missing.spins")]) == 2
    bad = tmp_path / "bad.spins"
    bad.write_text("2 1\n1 1 0\n")
    assert main(["fit", "--dataset", str(bad)]) == 2
    assert main(["fit", "--dataset", str(dataset), "--epsilon", "-1"]) == 2
    assert main(["bench", "--methods", "magic"]) == 2
    assert main(["reconstruct", "--out", str(tmp_path / "r")]) == 2
    assert main(["nonsense"]) == 2
    # an oversized step on a single-configuration dataset blows up the parameters
    one = tmp_path / "one.spins"
    one.write_text("3 5\n5 1 1 1\n")
    assert main(["fit", "--dataset", str(one), "--alpha", "5", "--out", str(tmp_path / "x.json")]) == 3


def test_no_timing_byte_identical(dataset, tmp_path):
    for k in range(2):
        assert main(["fit", "--dataset", str(dataset), "--no-timing", "--out", str(tmp_path / f"f{k}.json")]) == 0
        assert main(["scan", "--dataset", str(dataset), "--grid", "0.3,0.6", "--no-timing",
                     "--out", str(tmp_path / f"s{k}.json")]) == 0
    assert (tmp_path / "f0.json").read_bytes() == (tmp_path / "f1.json").read_bytes()
    assert (tmp_path / "s0.json").read_bytes() == (tmp_path / "s1.json").read_bytes()
    assert "seconds" not in json.loads((tmp_path / "f0.json").read_text())
