"""``tcagcn`` command line: synth, train, eval, scores, fuse, gradcheck, inspect.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure (divergence, non-finite values, failed gradient check).  Set
``TCAGCN_THREADS`` to cap BLAS threads.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .config import ConfigError, RunConfig
from .datasets import SyntheticSpec, load_dataset, make_synthetic, save_dataset
from .diagnostics import GRADCHECK_TOL, inspect_sample, network_gradcheck, perturb_for_gradcheck, pick_smooth_input
from .fusion import FusionError, fuse_accuracy, solve, solve_greedy, static_fuse
from .graph import TEMPLATES, GraphError, load_graph
from .network import (
    STREAMS,
    TCAGCN,
    ModelConfig,
    Schedule,
    TrainingDiverged,
    accuracy,
    center_normalize,
    channel_plan,
    derive_streams,
    evaluate_logits,
    predict_scores,
    train,
)
from .serialization import (
    load_checkpoint,
    read_scores,
    save_checkpoint,
    write_json,
    write_matrix_csv,
    write_metrics,
    write_scores,
)
from .tensor_io import FormatError

logger = logging.getLogger("tcagcn")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
THREADS_ENV = "TCAGCN_THREADS"
GRADCHECK_BLOCKS = ((3, 8, 1), (8, 8, 1))


class NumericalFailure(RuntimeError):
    pass


# --- helpers -------------------------------------------------------------


def _require(path, what):
    if path is None:
        raise ConfigError(f"--{what.replace('_', '-')} is required for this command")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _out_dir(cfg):
    if cfg.out is None:
        raise ConfigError("--out is required for this command")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def stream_inputs(dataset, stream, normalize=True):
    x = dataset.samples
    if normalize:
        x = center_normalize(x, dataset.graph.center)
    return derive_streams(x, dataset.graph)[stream]


def model_config(cfg, graph, num_classes):
    blocks = cfg.blocks if cfg.blocks is not None else channel_plan(cfg.scaled_widths(), cfg.counts, 3)
    return ModelConfig(
        num_classes=num_classes,
        blocks=blocks,
        graph=graph.to_dict(),
        in_channels=3,
        reduction_q=cfg.reduction_q,
        reduction=cfg.reduction,
        reduction_aff=cfg.reduction_aff,
        corr_activation=cfg.corr_activation,
        calib_activation=cfg.calib_activation,
    )


def schedule(cfg):
    return Schedule(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        base_lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        warmup_epochs=cfg.warmup_epochs,
        lr_steps=cfg.lr_steps,
    )


def _stream_seeds(seed):
    # init and shuffle seeds, one independent pair per stream
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    out = {}
    for name, child in zip(STREAMS, children):
        init, shuffle = child.generate_state(2)
        out[name] = (int(init), int(shuffle))
    return out


def fit_stream(cfg, train_set, eval_set, stream):
    """Train one model on one stream encoding; returns ``(model, history)``."""
    init_seed, shuffle_seed = _stream_seeds(cfg.seed)[stream]
    model = TCAGCN(model_config(cfg, train_set.graph, train_set.num_classes), seed=init_seed)
    x_eval = y_eval = None
    if eval_set is not None:
        _check_compatible(train_set, eval_set)
        x_eval, y_eval = stream_inputs(eval_set, stream, cfg.normalize), eval_set.labels
    history = train(
        model,
        stream_inputs(train_set, stream, cfg.normalize),
        train_set.labels,
        schedule(cfg),
        seed=shuffle_seed,
        x_eval=x_eval,
        y_eval=y_eval,
        target_accuracy=cfg.target_accuracy,
        refresh_stats=cfg.refresh_bn,
    )
    return model, history


def _check_compatible(a, b):
    if a.graph.num_joints != b.graph.num_joints or a.num_classes != b.num_classes:
        raise ValueError(
            f"datasets disagree: {a.graph.num_joints} vs {b.graph.num_joints} joints, "
            f"{a.num_classes} vs {b.num_classes} classes"
        )


def _checkpoint_extra(cfg, stream, train_set):
    return {"stream": stream, "normalize": cfg.normalize, "num_classes": train_set.num_classes, "seed": cfg.seed}


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# --- commands ------------------------------------------------------------


def cmd_synth(cfg):
    """Generate a synthetic labeled skeleton dataset."""
    if cfg.out is None:
        raise ConfigError("--out is required for synth (dataset manifest path)")
    spec = SyntheticSpec(
        num_classes=cfg.num_classes,
        samples_per_class=cfg.samples_per_class,
        T=cfg.frames,
        graph=cfg.graph,
        noise=cfg.noise,
        amplitude=cfg.amplitude,
        seed=cfg.seed,
        split=cfg.split,
    )
    dataset = make_synthetic(spec)
    parent = os.path.dirname(cfg.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    graph_ref = cfg.graph if cfg.graph in TEMPLATES else None
    save_dataset(cfg.out, dataset, graph_ref=graph_ref)
    _emit({"dataset": cfg.out, "samples": len(dataset), "noise_threshold": dataset.meta["noise_threshold"]})
    return EXIT_OK


def cmd_train(cfg):
    """Train one stream model; writes checkpoint, metrics and resolved config."""
    train_set = load_dataset(_require(cfg.dataset, "dataset"))
    eval_set = load_dataset(_require(cfg.eval_dataset, "eval_dataset")) if cfg.eval_dataset else None
    out = _out_dir(cfg)
    model, history = fit_stream(cfg, train_set, eval_set, cfg.stream)
    write_metrics(os.path.join(out, "metrics.csv"), history)
    save_checkpoint(os.path.join(out, "checkpoint.json"), model, _checkpoint_extra(cfg, cfg.stream, train_set))
    write_json(os.path.join(out, "config.json"), cfg.to_dict())
    last = history[-1]
    _emit({"epochs": last["epoch"], "loss": last["loss"], "train_acc": last["train_acc"], "eval_acc": last["eval_acc"]})
    return EXIT_OK


def _load_model(cfg):
    model, manifest = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    return model, manifest.get("stream", "joint"), manifest.get("normalize", True)


def cmd_eval(cfg):
    """Accuracy of a checkpoint on a dataset."""
    model, stream, normalize = _load_model(cfg)
    dataset = load_dataset(_require(cfg.dataset, "dataset"))
    logits = evaluate_logits(model, stream_inputs(dataset, stream, normalize))
    if not np.all(np.isfinite(logits)):
        raise NumericalFailure("model produced non-finite logits")
    right = int(np.sum(np.argmax(logits, axis=1) == dataset.labels))
    _emit({"accuracy": right / len(dataset), "right": right, "zong": len(dataset), "stream": stream})
    return EXIT_OK


def cmd_scores(cfg):
    """Train one model per stream and write each stream's eval-set scores."""
    train_set = load_dataset(_require(cfg.dataset, "dataset"))
    eval_set = load_dataset(_require(cfg.eval_dataset, "eval_dataset")) if cfg.eval_dataset else train_set
    out = _out_dir(cfg)
    report = {}
    for stream in cfg.streams:
        model, history = fit_stream(cfg, train_set, eval_set, stream)
        scores = predict_scores(model, stream_inputs(eval_set, stream, cfg.normalize), eval_set.labels, stream)
        scores.sample_ids = eval_set.sample_ids
        write_scores(os.path.join(out, f"scores_{stream}.csv"), scores)
        write_metrics(os.path.join(out, f"metrics_{stream}.csv"), history)
        save_checkpoint(
            os.path.join(out, f"checkpoint_{stream}.json"), model, _checkpoint_extra(cfg, stream, train_set)
        )
        report[stream] = history[-1]["eval_acc"]
    write_json(os.path.join(out, "config.json"), cfg.to_dict())
    _emit({"eval_acc": report})
    return EXIT_OK


def _score_paths(cfg, paths, scores_dir):
    if paths:
        if scores_dir:
            raise ConfigError("give either four score CSVs or --scores-dir, not both")
        if len(paths) != 4:
            raise ConfigError(f"fuse needs exactly four score CSVs, got {len(paths)}")
        return list(paths)
    if scores_dir is None:
        raise ConfigError("give four score CSVs or --scores-dir")
    return [os.path.join(scores_dir, f"scores_{s}.csv") for s in cfg.stream_order]


def cmd_fuse(cfg, paths=(), scores_dir=None):
    """Fuse four score CSVs: exact or greedy weight search, or a fixed preset."""
    paths = _score_paths(cfg, paths, scores_dir)
    streams = [read_scores(_require(p, "scores"), stream_id=os.path.basename(p)) for p in paths]
    if cfg.preset is not None:
        acc, right = static_fuse(streams, cfg.preset)
        result = {"weights": list(cfg.preset), "accuracy": acc, "right": right,
                  "zong": streams[0].num_samples, "tuples_evaluated": 1}
    elif cfg.mode == "exact":
        result = solve(streams, cfg.step).to_dict()
    else:
        result = solve_greedy(streams, cfg.step).to_dict()
    result["mode"] = "static" if cfg.preset is not None else cfg.mode
    result["static_uniform"] = fuse_accuracy(streams, (1.0, 1.0, 1.0, 1.0))[0]
    result["single_stream"] = {s.stream_id: accuracy(s.scores, s.labels) for s in streams}
    if cfg.out:
        write_json(cfg.out, result)
    _emit(result)
    return EXIT_OK


def cmd_gradcheck(cfg, corrupt=None):
    """Per-parameter max relative error of backward against central differences."""
    graph = load_graph(cfg.graph)
    blocks = cfg.blocks if cfg.blocks is not None else GRADCHECK_BLOCKS
    mcfg = replace(model_config(cfg, graph, cfg.num_classes), blocks=blocks)
    model = TCAGCN(mcfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    perturb_for_gradcheck(model, rng)
    labels = np.arange(4) % cfg.num_classes
    x, margin = pick_smooth_input(model, (4, cfg.frames, graph.num_joints, 3), labels, rng)
    if corrupt:
        with ad.corrupt_backward(corrupt):
            report = network_gradcheck(model, x, labels)
    else:
        report = network_gradcheck(model, x, labels)
    width = max(len(k) for k in report)
    print(f"{'parameter':<{width}}  max_rel_err")
    for name, err in report.items():
        flag = "" if err < GRADCHECK_TOL else "  FAIL"
        print(f"{name:<{width}}  {err:.3e}{flag}")
    worst = max(report.values())
    print(f"kink margin {margin:.3e}; worst {worst:.3e}; tolerance {GRADCHECK_TOL:g}")
    if cfg.out:
        write_json(cfg.out, {"errors": report, "worst": worst, "kink_margin": margin})
    if not worst < GRADCHECK_TOL:
        raise NumericalFailure(f"gradient check failed: worst relative error {worst:.3e}")
    return EXIT_OK


def cmd_inspect(cfg):
    """Dump topologies, calibration curves and joint feature norms for one sample."""
    model, stream, normalize = _load_model(cfg)
    dataset = load_dataset(_require(cfg.dataset, "dataset"))
    if cfg.sample_id is None:
        raise ConfigError("--sample-id is required for inspect")
    try:
        i = dataset.sample_ids.index(cfg.sample_id)
    except ValueError:
        raise ConfigError(f"unknown sample id {cfg.sample_id!r}") from None
    out = _out_dir(cfg)
    x = stream_inputs(dataset, stream, normalize)[i]
    parts = inspect_sample(model, x, cfg.block)
    for k, s in enumerate(parts["topology"], start=1):
        for c in range(s.shape[-1]):
            write_matrix_csv(os.path.join(out, f"topology_k{k}_c{c}.csv"), s[:, :, c])
    # first partition subset (the self-loop root); the others go to calibration_k{k}.csv
    write_matrix_csv(os.path.join(out, "calibration.csv"), parts["calibration"][0])
    for k, a in enumerate(parts["calibration"], start=1):
        write_matrix_csv(os.path.join(out, f"calibration_k{k}.csv"), a)
    write_matrix_csv(os.path.join(out, "joint_features.csv"), parts["joint_features"])
    _emit({"sample_id": cfg.sample_id, "label": int(dataset.labels[i]), "out": out})
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "scores": cmd_scores,
    "fuse": cmd_fuse,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


# --- argument parsing ----------------------------------------------------


def _csv(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v != ""]

    return parse


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _blocks(text):
    # "3:8:1,8:8:1"
    return [[int(v) for v in b.split(":")] for b in text.split(",")]


_FLAG_TYPES = {
    "widths": _csv(int),
    "counts": _csv(int),
    "lr_steps": _csv(int),
    "streams": _csv(str),
    "stream_order": _csv(str),
    "preset": _csv(float),
    "blocks": _blocks,
    "normalize": _bool,
    "refresh_bn": _bool,
    "target_accuracy": float,
}


def _add_config_flags(parser):
    for f in fields(RunConfig):
        kind = _FLAG_TYPES.get(f.name)
        if kind is None:
            kind = type(f.default) if f.default is not None else str
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its values")
    common.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(common)
    parser = argparse.ArgumentParser(prog="tcagcn", description="Skeleton action recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").strip().split("\n")[0] or None)
        if name == "fuse":
            p.add_argument("scores", nargs="*", help="four score CSVs in weight order a, b, c, d")
            p.add_argument("--scores-dir", help="directory of scores_<stream>.csv files, read in --stream-order")
        if name == "gradcheck":
            p.add_argument("--corrupt", metavar="OP", help="scale the backward of OP (negative control)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    try:
        cfg = RunConfig.load(args.config, overrides)
        extra = {}
        if args.command == "fuse":
            extra["paths"] = args.scores
            extra["scores_dir"] = args.scores_dir
        if args.command == "gradcheck":
            extra["corrupt"] = args.corrupt
        threads = os.environ.get(THREADS_ENV)
        with threadpool_limits(limits=int(threads) if threads else None):
            return COMMANDS[args.command](cfg, **extra)
    except (TrainingDiverged, NumericalFailure, FloatingPointError) as exc:
        print(f"tcagcn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FusionError, GraphError, FormatError, ValueError, KeyError, OSError, IndexError) as exc:
        print(f"tcagcn {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
