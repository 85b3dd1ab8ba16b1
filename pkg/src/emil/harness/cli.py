"""Command-line interface: generate / train / eval / heatmap / gradcheck / selftest.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime failure.
With ``--json`` every log event is one JSON object on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..encoder import EncoderConfig
from ..head import HeadConfig, Prediction, build_heatmaps
from ..ndtensor import ShapeError, Tensor, pool_output_dims
from ..pgm import write_pgm
from ..synthgen import generate, read_dataset, stratified_split, write_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config, run_config_from_values
from .evaluate import evaluate
from .selftest import gradcheck_battery, run_selftest
from .train import params_to_tensors, predict_scores, train


class _Emitter:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def __call__(self, event) -> None:
        if isinstance(event, str):
            event = {"event": "message", "message": event}
        if self.as_json:
            event = dict(event)
            event.setdefault("ts", time.time())
            print(json.dumps(event, sort_keys=True), flush=True)
        else:
            kind = event.get("event", "message")
            body = " ".join(f"{k}={v}" for k, v in event.items() if k not in ("event", "ts"))
            print(f"[{kind}] {body}", flush=True)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2; we reserve that for crashes
        raise ConfigError(message)


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="emil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output path")
        p.add_argument("--json", action="store_true", help="JSON-lines log output")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of samples")

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    common(p)
    p.add_argument("--dataset", default=None, help="dataset path (overrides config)")
    p.add_argument("--folds", type=int, default=None, help="cross-validation folds")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")

    p = sub.add_parser("heatmap", help="export probability/attention heatmaps as PGM")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--indices", default="0", help="comma-separated sample indices")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    common(p)
    p.add_argument("--instances", type=int, default=5)

    p = sub.add_parser("selftest", help="run the oracle and invariant battery")
    common(p)
    return parser


def _load_cfg(args) -> RunConfig:
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    if getattr(args, "folds", None):
        overrides["train.folds"] = args.folds
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        return load_run_config(args.config, overrides)
    return run_config_from_values({k: v for k, v in overrides.items() if v is not None})


def _load_samples(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset path given (config key 'dataset' or --dataset)")
    if not Path(cfg.dataset).exists():
        raise ConfigError(f"dataset not found: {cfg.dataset}")
    return read_dataset(cfg.dataset)


def _splits(samples, cfg: RunConfig):
    labels = [s.label for s in samples]
    return stratified_split(labels, cfg.split, cfg.seed)


def cmd_generate(args, emit) -> int:
    cfg = _load_cfg(args)
    n = args.n if args.n is not None else cfg.synth_n
    out = args.out or cfg.out
    if not out:
        raise ConfigError("generate needs an output path (--out)")
    samples = generate(cfg.synth, n, cfg.seed)
    write_dataset(samples, out)
    emit({"event": "generated", "n": n, "seed": cfg.seed, "path": str(out),
          "positives": int(sum(s.label for s in samples))})
    return 0


def _run_one_fold(cfg, samples, train_idx, val_idx, emit):
    return train(cfg, samples, train_idx, val_idx, log_fn=emit)


def cmd_train(args, emit) -> int:
    cfg = _load_cfg(args)
    samples = _load_samples(cfg)
    train_idx, val_idx, test_idx = _splits(samples, cfg)
    out = args.out or cfg.out or "model.emc1"

    if cfg.folds > 1:
        pool = np.concatenate([train_idx, val_idx])
        pool_labels = np.asarray([samples[i].label for i in pool])
        rng = np.random.default_rng([cfg.seed, 5])
        per_class = {c: rng.permutation(pool[pool_labels == c]) for c in np.unique(pool_labels)}
        fold_members = [[] for _ in range(cfg.folds)]
        for c, idxs in per_class.items():
            for j, i in enumerate(idxs):
                fold_members[j % cfg.folds].append(int(i))
        results = []
        for k in range(cfg.folds):
            fold_val = np.asarray(sorted(fold_members[k]), dtype=np.int64)
            fold_train = np.asarray(sorted(set(pool.tolist()) - set(fold_members[k])), dtype=np.int64)
            emit({"event": "fold", "fold": k, "train": len(fold_train), "val": len(fold_val)})
            res = _run_one_fold(cfg, samples, fold_train, fold_val, emit)
            fold_path = f"{out}.fold{k}"
            save_checkpoint(fold_path, res.params, res.meta)
            rep = evaluate(res.params, cfg, samples, test_idx)
            results.append(rep.image.balanced_accuracy)
            emit({"event": "fold_result", "fold": k, "checkpoint": fold_path,
                  "test_balanced_accuracy": rep.image.balanced_accuracy})
        emit({"event": "cv_summary", "folds": cfg.folds,
              "mean_test_balanced_accuracy": float(np.mean(results)),
              "std_test_balanced_accuracy": float(np.std(results))})
        return 0

    result = _run_one_fold(cfg, samples, train_idx, val_idx, emit)
    save_checkpoint(out, result.params, result.meta)
    emit({"event": "trained", "checkpoint": str(out), "best_epoch": result.best_epoch,
          "best_val_balanced_accuracy": result.best_val_balanced_accuracy})
    return 0


def _cfg_from_checkpoint(meta: dict, cfg: RunConfig) -> RunConfig:
    from dataclasses import replace

    return replace(
        cfg,
        encoder=EncoderConfig(**meta["encoder"]),
        head=HeadConfig(**meta["head"]),
    )


def cmd_eval(args, emit) -> int:
    cfg = _load_cfg(args)
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    params, meta = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(meta, cfg)
    samples = _load_samples(cfg)
    train_idx, val_idx, test_idx = _splits(samples, cfg)
    chosen = {"train": train_idx, "val": val_idx, "test": test_idx,
              "all": np.arange(len(samples))}[args.split]
    result = evaluate(params, cfg, samples, chosen)
    payload = {
        "split": args.split,
        "n": len(chosen),
        "image": result.image.to_dict(),
        "group": result.group.to_dict() if result.group else None,
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    emit({"event": "metrics", **payload})
    if not emit.as_json:
        print(text)
    return 0


def cmd_heatmap(args, emit) -> int:
    cfg = _load_cfg(args)
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    params, meta = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(meta, cfg)
    samples = _load_samples(cfg)
    try:
        indices = [int(tok) for tok in args.indices.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --indices: {exc}") from exc
    if not indices:
        raise ConfigError("no sample indices given")
    for i in indices:
        if not 0 <= i < len(samples):
            raise ConfigError(f"sample index {i} out of range 0..{len(samples) - 1}")
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    enc_params, head_params = params_to_tensors(params)
    h, w = samples[indices[0]].image.shape
    feature_dims = cfg.encoder.feature_dims(h, w)
    grid = pool_output_dims(*feature_dims, cfg.head.kernel, cfg.head.stride)
    scores, patch_records = predict_scores(
        samples, indices, enc_params, head_params, cfg, collect_patches=True)
    for pos, i in enumerate(indices):
        y_tilde, w_vec, _ = patch_records[pos]
        pred = Prediction(
            y_hat=Tensor(np.asarray(scores[pos])), y_tilde=Tensor(y_tilde),
            w=None if w_vec is None else Tensor(w_vec),
            grid=grid, k_min=cfg.head.k_min, aggregator=cfg.head.aggregator)
        prob_map, attn_map = build_heatmaps(pred, cfg.head.kernel, cfg.head.stride, (h, w))
        stem = out_dir / f"sample{i:05d}"
        for tag, hm in (("prob", prob_map), ("attn", attn_map)):
            write_pgm(f"{stem}.{tag}.pgm", hm.render)
            with open(f"{stem}.{tag}.txt", "w", encoding="utf-8") as f:
                for row in hm.grid:
                    f.write(" ".join(repr(float(v)) for v in row) + "\n")
        emit({"event": "heatmap", "index": i, "y_hat": float(scores[pos]),
              "prob": f"{stem}.prob.pgm", "attn": f"{stem}.attn.pgm"})
    return 0


def cmd_gradcheck(args, emit) -> int:
    worst_overall = 0.0
    for name, err in gradcheck_battery(instances=args.instances):
        emit({"event": "gradcheck", "op": name, "max_rel_err": err,
              "pass": bool(err < 1e-4)})
        worst_overall = max(worst_overall, err)
    if worst_overall >= 1e-4:
        raise RuntimeError(f"gradient check failed: max relative error {worst_overall:.3e}")
    return 0


def cmd_selftest(args, emit) -> int:
    ok = run_selftest(lambda msg: emit({"event": "selftest", "check": msg}))
    if not ok:
        raise RuntimeError("selftest failed")
    emit({"event": "selftest_done", "ok": True})
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        emit = _Emitter(bool(getattr(args, "json", False)))
        return _COMMANDS[args.command](args, emit)
    except (ConfigError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
