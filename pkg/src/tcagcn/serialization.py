"""Checkpoints, score CSVs and metrics CSVs."""

import csv
import json
import math

import numpy as np

from .fusion import ScoreMatrix
from .network import TCAGCN, ModelConfig
from .tensor_io import load_state, save_state

METRIC_FIELDS = ("epoch", "lr", "loss", "train_acc", "eval_acc")


def save_checkpoint(path, model, extra=None):
    meta = {"model_config": model.config.to_dict()}
    if extra:
        meta.update(extra)
    return save_state(path, model.state_dict(), meta)


def load_checkpoint(path):
    state, manifest = load_state(path)
    cfg = dict(manifest["model_config"])
    model = TCAGCN(ModelConfig(**cfg))
    model.load_state_dict(state)
    return model, manifest


def _fmt(x):
    return repr(float(x))


def write_scores(path, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label"] + [f"s{c}" for c in range(matrix.num_classes)])
        for sid, lab, row in zip(matrix.sample_ids, matrix.labels, matrix.scores):
            w.writerow([sid, int(lab)] + [_fmt(v) for v in row])


def read_scores(path, stream_id=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "label"]:
        raise ValueError(f"{path}: expected header sample_id,label,s0,...")
    header = rows[0]
    expected = [f"s{c}" for c in range(len(header) - 2)]
    if header[2:] != expected:
        raise ValueError(f"{path}: score columns must be {','.join(expected)}")
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
    scores = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), len(header) - 2)
    return ScoreMatrix(
        stream_id or str(path),
        scores,
        [int(r[1]) for r in body],
        tuple(r[0] for r in body),
    )


def write_metrics(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + ["" if math.isnan(row[k]) else _fmt(row[k]) for k in METRIC_FIELDS[1:]])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        out = []
        for r in reader:
            row = {"epoch": int(r["epoch"])}
            row.update({k: float(r[k]) if r[k] != "" else float("nan") for k in METRIC_FIELDS[1:]})
            out.append(row)
    return out


def write_matrix_csv(path, matrix):
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")


def read_matrix_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
