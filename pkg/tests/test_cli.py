import csv

import numpy as np
import pytest

from kvmix.cli import main
from kvmix.tensor import KVDump, read_kvdump, write_kvdump


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def synth(tmp_path):
    def make(*extra, name="synthetic.kvd"):
        args = ["synth", "--out-dir", str(tmp_path), "--file-name", name, *extra]
        assert main(args) == 0
        return tmp_path / name
    return make


def test_synth_ratio(synth):
    from kvmix.spectral import frobenius_norm

    dump = read_kvdump(synth("--layers", "2", "--heads", "2", "--d-head", "16", "--seq-len", "64"))
    assert (dump.n_layers, dump.n_heads, dump.d_head, dump.seq_len) == (2, 2, 16, 64)
    for layer in range(2):
        for head in range(2):
            ratio = frobenius_norm(dump.matrix(layer, head, "K")) / frobenius_norm(dump.matrix(layer, head, "V"))
            assert ratio == pytest.approx(6.2, abs=1e-3)


def test_analyze_counts_and_ordering(synth, tmp_path):
    path = synth("--layers", "2", "--heads", "2", "--d-head", "8", "--seq-len", "32")
    out = tmp_path / "an"
    assert main(["analyze", "--input", str(path), "--out-dir", str(out)]) == 0
    spectrum = read_csv(out / "spectrum.csv")
    assert len(spectrum) == 8
    assert list(spectrum[0])[:9] == ["model_name", "layer", "head", "cache_kind", "seq_len", "d_head",
                                     "spectral_norm", "frobenius_norm", "rank_estimate"]
    agg = read_csv(out / "aggregate.csv")
    assert len(agg) == 2 * 2 * 3
    means = {(r["layer"], r["cache_kind"]): float(r["frobenius_norm"]) for r in agg if r["stat"] == "mean"}
    for layer in ("0", "1"):
        assert means[(layer, "K")] > means[(layer, "V")]


def test_missing_input_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--input", str(tmp_path / "nope.kvd"), "--out-dir", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_corrupt_input(tmp_path):
    bad = tmp_path / "bad.kvd"
    bad.write_bytes(b"XXXX" + bytes(40))
    assert main(["evaluate", "--input", str(bad), "--out-dir", str(tmp_path / "o")]) == 2


def test_usage_errors(synth, tmp_path):
    path = synth("--layers", "1", "--heads", "1", "--d-head", "4", "--seq-len", "8")
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1
    assert main(["evaluate", "--input", str(path), "--out-dir", str(tmp_path), "--bits-k", "9"]) == 1
    assert main(["allocate", "--input", str(path), "--out-dir", str(tmp_path), "--budget", "3"]) == 1


def test_evaluate_k4v2_beats_k2v4(synth, tmp_path):
    path = synth("--layers", "2", "--heads", "2", "--d-head", "32", "--seq-len", "128")
    combined = {}
    for bk, bv in ((4, 2), (2, 4)):
        out = tmp_path / f"k{bk}v{bv}"
        assert main(["evaluate", "--input", str(path), "--out-dir", str(out),
                     "--bits-k", str(bk), "--bits-v", str(bv)]) == 0
        summary = read_csv(out / "summary.csv")
        assert [(r["cache_kind"], r["b"]) for r in summary] == [("K", str(bk)), ("V", str(bv))]
        assert len(read_csv(out / "errors.csv")) == 8
        combined[(bk, bv)] = sum(float(r["mean_mse"]) for r in summary)
    assert combined[(4, 2)] < combined[(2, 4)]


def test_evaluate_zero_dump(tmp_path):
    path = tmp_path / "z.kvd"
    write_kvdump(KVDump("z", np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4))), path)
    assert main(["evaluate", "--input", str(path), "--out-dir", str(tmp_path), "--bits-k", "3", "--bits-v", "3"]) == 0
    for row in read_csv(tmp_path / "errors.csv"):
        assert float(row["mse"]) == 0.0 and float(row["spectral_error"]) == 0.0


def test_evaluate_short_sequence_warns(synth, tmp_path, capsys):
    path = synth("--layers", "1", "--heads", "1", "--d-head", "16", "--seq-len", "8")
    assert main(["evaluate", "--input", str(path), "--out-dir", str(tmp_path)]) == 0
    assert "warning" in capsys.readouterr().err


def test_sweep_monotone(synth, tmp_path):
    path = synth("--layers", "1", "--heads", "2", "--d-head", "16", "--seq-len", "64")
    assert main(["sweep", "--input", str(path), "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    for kind in ("K", "V"):
        mses = [float(r["mean_mse"]) for r in rows if r["cache_kind"] == kind]
        assert len(mses) == 7
        assert all(a > b for a, b in zip(mses, mses[1:]))


def test_sweep_single_entry(tmp_path):
    path = tmp_path / "one.kvd"
    write_kvdump(KVDump("one", np.full((1, 1, 1, 1), 0.7), np.full((1, 1, 1, 1), -0.2)), path)
    assert main(["sweep", "--input", str(path), "--out-dir", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "sweep.csv")) == 14


def test_allocate(synth, tmp_path):
    path = synth("--ratio", "4", "--layers", "2", "--heads", "2", "--d-head", "8", "--seq-len", "32")
    assert main(["allocate", "--input", str(path), "--out-dir", str(tmp_path), "--budget", "6"]) == 0
    rows = read_csv(tmp_path / "allocation.csv")
    assert [r["layer"] for r in rows] == ["0", "1", "global"]
    assert all((r["b_k"], r["b_v"]) == ("4", "2") for r in rows)


def test_allocate_symmetric(synth, tmp_path):
    path = synth("--ratio", "1", "--layers", "1", "--heads", "2", "--d-head", "8", "--seq-len", "32")
    assert main(["allocate", "--input", str(path), "--out-dir", str(tmp_path), "--budget", "8"]) == 0
    glob = read_csv(tmp_path / "allocation.csv")[-1]
    assert (glob["b_k"], glob["b_v"]) == ("4", "4")


def test_quantize_outputs(synth, tmp_path):
    path = synth("--layers", "1", "--heads", "1", "--d-head", "8", "--seq-len", "16")
    out = tmp_path / "q"
    assert main(["quantize", "--input", str(path), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "quantized.csv")
    assert [(r["cache_kind"], r["b"]) for r in rows] == [("K", "4"), ("V", "2")]
    recon = read_kvdump(out / "dequantized.kvd")
    assert len(np.unique(recon.values)) <= 4


def test_simulate(tmp_path):
    args = ["simulate", "--out-dir", str(tmp_path), "--depth", "4", "--dim", "8", "--trials", "2"]
    assert main(args) == 0
    rows = read_csv(tmp_path / "trace.csv")
    assert len(rows) == 2 * 2 * 5
    final = [r for r in rows if r["layer"] == "4"]
    assert all(r["bound"] == "" for r in final)
    for r in rows:
        if r["bound"]:
            assert float(r["local_deviation"]) <= float(r["bound"]) + 1e-9
    assert main(["simulate", "--out-dir", str(tmp_path), "--depth", "0"]) == 1
