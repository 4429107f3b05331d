import csv
import filecmp
import json
import os

import numpy as np
import pytest

from tcagcn.cli import main
from tcagcn.config import ConfigError, RunConfig
from tcagcn.datasets import SyntheticSpec, load_dataset, make_synthetic, save_dataset
from tcagcn.fusion import ScoreMatrix
from tcagcn.graph import load_graph, spatial_partition
from tcagcn.serialization import (
    load_checkpoint,
    read_matrix_csv,
    read_metrics,
    read_scores,
    save_checkpoint,
    write_metrics,
    write_scores,
)
from tcagcn.tensor_io import FormatError, decode, encode, load_tensor, read_records, save_tensor, write_records

TINY = ["--graph", "toy5", "--frames", "8", "--samples-per-class", "4", "--blocks", "3:8:1,8:8:1"]
TRAIN = ["--epochs", "3", "--batch-size", "4", "--lr-steps", "2"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, capsys):
    train = str(tmp_path / "train.json")
    test = str(tmp_path / "test.json")
    assert run(["synth", "--out", train] + TINY, capsys)[0] == 0
    assert run(["synth", "--out", test, "--split", "1"] + TINY, capsys)[0] == 0
    return train, test


# --- tensor file format ---------------------------------------------------


def test_tensor_encode_round_trip_and_layout(tmp_path):
    a = np.arange(6.0).reshape(2, 3)
    raw = encode(a)
    assert raw[:4] == b"TCAT" and int.from_bytes(raw[4:8], "little") == 2
    back, end = decode(raw)
    assert np.array_equal(back, a) and end == len(raw)
    path = tmp_path / "t.bin"
    save_tensor(path, a)
    assert np.array_equal(load_tensor(path), a)
    offsets = write_records(tmp_path / "r.bin", [a, np.ones(4), np.zeros((1, 1, 2))])
    back = read_records(tmp_path / "r.bin", offsets)
    assert np.array_equal(back[0], a) and back[2].shape == (1, 1, 2)


def test_tensor_decode_rejects_corruption():
    raw = encode(np.ones(3))
    with pytest.raises(FormatError):
        decode(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        decode(raw[:-3])


# --- config ---------------------------------------------------------------


def test_config_round_trip_and_flags_win(tmp_path):
    cfg = RunConfig(widths=(8, 16), counts=(1, 2), preset=(1, 1, 1, 1), blocks=((3, 8, 1),))
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert RunConfig.from_dict(json.loads(cfg.to_json())).to_dict() == cfg.to_dict()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    merged = RunConfig.load(str(path), {"epochs": 7, "seed": None})
    assert merged.epochs == 7 and merged.widths == (8, 16) and merged.seed == cfg.seed


@pytest.mark.parametrize(
    "bad",
    [{"epochs": 0}, {"bogus": 1}, {"stream": "speed"}, {"step": 2.0}, {"mode": "fast"}, {"preset": [1, 1]},
     {"widths": [8], "counts": [1, 2]}, {"epochs": "ten"}, {"stream_order": ["joint"] * 4}],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"nonsense": 3}))
    code, _, err = run(["synth", "--config", str(path), "--out", str(tmp_path / "d.json")], capsys)
    assert code == 2 and "nonsense" in err


# --- synthetic data -------------------------------------------------------


def test_synth_is_deterministic_and_sized(tmp_path, capsys):
    paths = [str(tmp_path / f"run{i}" / "d.json") for i in range(2)]
    for p in paths:
        os.makedirs(os.path.dirname(p))
        assert run(["synth", "--out", p, "--graph", "toy9", "--seed", "4"], capsys)[0] == 0
    assert filecmp.cmp(paths[0], paths[1], shallow=False)
    assert filecmp.cmp(paths[0] + ".bin", paths[1] + ".bin", shallow=False)
    manifest = json.load(open(paths[0]))
    assert len(manifest["samples"]) == 40 and manifest["synthetic"]["T"] == 16
    assert load_dataset(paths[0]).samples.shape == (40, 16, 9, 3)


def test_zero_noise_makes_class_samples_identical():
    ds = make_synthetic(SyntheticSpec(num_classes=3, samples_per_class=4, noise=0.0))
    for k in range(3):
        block = ds.samples[ds.labels == k]
        assert all(np.array_equal(block[0], b) for b in block)


def test_noise_below_threshold_is_nearest_archetype_separable():
    spec = SyntheticSpec(num_classes=3, samples_per_class=10, noise=0.05)
    ds = make_synthetic(spec)
    clean = make_synthetic(SyntheticSpec(num_classes=3, samples_per_class=1, noise=0.0)).samples
    assert spec.noise < ds.meta["noise_threshold"]
    d = ((ds.samples[:, None] - clean[None]) ** 2).sum(axis=(2, 3, 4))
    assert np.array_equal(d.argmin(axis=1), ds.labels)


def test_splits_share_archetypes_but_not_noise():
    a = make_synthetic(SyntheticSpec(noise=0.0, split=0))
    b = make_synthetic(SyntheticSpec(noise=0.0, split=1))
    c = make_synthetic(SyntheticSpec(split=1))
    assert np.array_equal(a.samples, b.samples) and not np.array_equal(c.samples, b.samples)
    assert set(a.sample_ids).isdisjoint(c.sample_ids)


def test_invalid_template_exits_2(tmp_path, capsys):
    code, _, err = run(["synth", "--out", str(tmp_path / "x.json"), "--graph", "nosuch"], capsys)
    assert code == 2


def test_dataset_round_trip(tmp_path):
    ds = make_synthetic(SyntheticSpec(samples_per_class=3, graph="toy5", T=5))
    save_dataset(tmp_path / "d.json", ds, graph_ref="toy5")
    back = load_dataset(tmp_path / "d.json")
    assert np.array_equal(back.samples, ds.samples) and back.sample_ids == ds.sample_ids
    assert back.graph == load_graph("toy5") and back.meta["noise_threshold"] == ds.meta["noise_threshold"]


# --- train / eval / scores ------------------------------------------------


def test_train_then_eval_agree_and_rerun_is_bitwise(data, tmp_path, capsys):
    train, test = data
    outs = [str(tmp_path / f"run{i}") for i in range(2)]
    for out in outs:
        code, stdout, err = run(["train", "--dataset", train, "--eval-dataset", test, "--out", out] + TINY + TRAIN, capsys)
        assert code == 0, err
    for name in ("metrics.csv", "checkpoint.json", "checkpoint.json.bin"):
        assert filecmp.cmp(os.path.join(outs[0], name), os.path.join(outs[1], name), shallow=False)
    history = read_metrics(os.path.join(outs[0], "metrics.csv"))
    assert [row["epoch"] for row in history] == [1, 2, 3]
    code, stdout, _ = run(["eval", "--checkpoint", os.path.join(outs[0], "checkpoint.json"), "--dataset", test], capsys)
    assert code == 0 and json.loads(stdout)["accuracy"] == history[-1]["eval_acc"]


def test_train_missing_dataset_exits_2(tmp_path, capsys):
    code, _, err = run(["train", "--dataset", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "not found" in err


def test_divergence_exits_3(data, tmp_path, capsys):
    train, _ = data
    argv = ["train", "--dataset", train, "--out", str(tmp_path / "o"), "--base-lr", "1e12", "--warmup-epochs", "0"]
    with np.errstate(all="ignore"):
        code, _, err = run(argv + TINY + ["--epochs", "20", "--batch-size", "4"], capsys)
    assert code == 3 and "numerical" in err


def test_eval_shape_mismatch_exits_2(data, tmp_path, capsys):
    train, _ = data
    out = str(tmp_path / "o")
    assert run(["train", "--dataset", train, "--out", out] + TINY + TRAIN, capsys)[0] == 0
    other = str(tmp_path / "nine.json")
    assert run(["synth", "--out", other, "--graph", "toy9", "--samples-per-class", "2"], capsys)[0] == 0
    code, _, err = run(["eval", "--checkpoint", os.path.join(out, "checkpoint.json"), "--dataset", other], capsys)
    assert code == 2


def test_scores_emit_four_csvs_that_fuse(data, tmp_path, capsys):
    train, test = data
    out = str(tmp_path / "scores")
    code, _, err = run(["scores", "--dataset", train, "--eval-dataset", test, "--out", out] + TINY + TRAIN, capsys)
    assert code == 0, err
    mats = [read_scores(os.path.join(out, f"scores_{s}.csv")) for s in ("joint", "bone", "joint_motion", "bone_motion")]
    assert all(m.num_samples == 8 and m.num_classes == 2 for m in mats)
    code, stdout, _ = run(["fuse", "--scores-dir", out, "--step", "0.1"], capsys)
    result = json.loads(stdout)
    assert code == 0 and result["zong"] == 8 and result["tuples_evaluated"] == 210
    a, b, c, d = result["weights"]
    assert b > a > c > d


# --- fuse -----------------------------------------------------------------


def write_fixture(tmp_path, ids=("u", "v", "w")):
    r = np.zeros((4, 3, 2))
    r[:, :2, 0] = 1.0
    r[:, 2] = [[1.0, 0.0], [0.0, 2.52], [1.0, 0.0], [1.0, 0.0]]
    paths = []
    for k in range(4):
        p = str(tmp_path / f"r{k}.csv")
        write_scores(p, ScoreMatrix(f"r{k}", r[k], [0, 0, 1], ids))
        paths.append(p)
    return paths


def test_fuse_fixture_exact_greedy_and_preset(tmp_path, capsys):
    paths = write_fixture(tmp_path)
    code, stdout, _ = run(["fuse"] + paths + ["--out", str(tmp_path / "res.json")], capsys)
    res = json.loads(stdout)
    assert code == 0 and res["accuracy"] == 1.0 and res["right"] == 3 and res["weights"] == [0.95, 1.0, 0.9, 0.65]
    assert res["static_uniform"] == pytest.approx(2 / 3)
    assert json.load(open(tmp_path / "res.json"))["weights"] == res["weights"]
    code, stdout, _ = run(["fuse"] + paths + ["--mode", "greedy"], capsys)
    assert code == 0 and json.loads(stdout)["accuracy"] <= 1.0
    code, stdout, _ = run(["fuse"] + paths + ["--preset", "1,0.05,0.05,0.05"], capsys)
    assert json.loads(stdout)["accuracy"] == pytest.approx(2 / 3)


def test_fuse_misaligned_ids_exit_2_with_diff(tmp_path, capsys):
    paths = write_fixture(tmp_path)
    r = read_scores(paths[3])
    write_scores(paths[3], ScoreMatrix("r3", r.scores, r.labels, ("u", "v", "q9")))
    code, _, err = run(["fuse"] + paths, capsys)
    assert code == 2 and "q9" in err and "'w'" in err


def test_fuse_needs_four_files(tmp_path, capsys):
    paths = write_fixture(tmp_path)
    assert run(["fuse"] + paths[:3], capsys)[0] == 2


# --- gradcheck ------------------------------------------------------------


def test_gradcheck_reports_every_parameter_once_and_passes(capsys):
    code, stdout, _ = run(["gradcheck", "--graph", "toy5", "--frames", "4", "--blocks", "3:4:1", "--num-classes", "2"], capsys)
    assert code == 0
    rows = [line.split()[0] for line in stdout.splitlines()[1:-1]]
    assert len(rows) == len(set(rows)) and "fc.weight" in rows and "blocks.0.tca.2.alpha" in rows


def test_gradcheck_catches_corrupted_backward(capsys):
    argv = ["gradcheck", "--graph", "toy5", "--frames", "4", "--blocks", "3:4:1", "--num-classes", "2"]
    code, stdout, _ = run(argv + ["--corrupt", "joint_mix"], capsys)
    assert code == 3 and "FAIL" in stdout


# --- inspect --------------------------------------------------------------


def test_inspect_fresh_model_dumps(tmp_path, data, capsys):
    from tcagcn.cli import model_config
    from tcagcn.network import TCAGCN

    train, _ = data
    ds = load_dataset(train)
    cfg = RunConfig(graph="toy5", blocks=((3, 8, 1), (8, 8, 1)))
    ckpt = str(tmp_path / "fresh.json")
    save_checkpoint(ckpt, TCAGCN(model_config(cfg, ds.graph, 2)), {"stream": "joint", "normalize": True})
    out = str(tmp_path / "inspect")
    code, _, err = run(["inspect", "--checkpoint", ckpt, "--dataset", train, "--sample-id", ds.sample_ids[3], "--out", out], capsys)
    assert code == 0, err
    mu = spatial_partition(ds.graph).normalized
    for k in range(3):
        for c in range(8):
            s = read_matrix_csv(os.path.join(out, f"topology_k{k + 1}_c{c}.csv"))
            assert s.shape == (5, 5) and np.max(np.abs(s - mu[k])) <= 1e-12
    cal = read_matrix_csv(os.path.join(out, "calibration.csv"))
    assert cal.shape == (8, 8) and np.array_equal(cal, np.ones((8, 8)))
    assert read_matrix_csv(os.path.join(out, "joint_features.csv")).shape == (8, 5)


def test_inspect_unknown_sample_exits_2(tmp_path, data, capsys):
    train, _ = data
    out = str(tmp_path / "o")
    assert run(["train", "--dataset", train, "--out", out] + TINY + ["--epochs", "1"], capsys)[0] == 0
    code, _, err = run(["inspect", "--checkpoint", os.path.join(out, "checkpoint.json"), "--dataset", train,
                        "--sample-id", "missing", "--out", str(tmp_path / "i")], capsys)
    assert code == 2 and "missing" in err


# --- csv readers ----------------------------------------------------------


def test_metrics_csv_round_trip(tmp_path):
    hist = [{"epoch": 1, "lr": 0.02, "loss": 0.5, "train_acc": 0.25, "eval_acc": float("nan")}]
    write_metrics(tmp_path / "m.csv", hist)
    back = read_metrics(tmp_path / "m.csv")
    assert back[0]["loss"] == 0.5 and np.isnan(back[0]["eval_acc"])
    with open(tmp_path / "m.csv") as fh:
        assert next(csv.reader(fh)) == ["epoch", "lr", "loss", "train_acc", "eval_acc"]


def test_score_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,label,s0\nx,0,1.0\n")
    with pytest.raises(ValueError):
        read_scores(p)


def test_checkpoint_round_trip(tmp_path):
    from tcagcn.network import TCAGCN, ModelConfig

    m = TCAGCN(ModelConfig(num_classes=2, blocks=((3, 4, 1),), graph="toy5"), seed=3)
    save_checkpoint(tmp_path / "c.json", m, {"stream": "bone"})
    back, manifest = load_checkpoint(tmp_path / "c.json")
    assert manifest["stream"] == "bone"
    assert all(np.array_equal(v, back.state_dict()[k]) for k, v in m.state_dict().items())
