"""Command-line entry point.

Subcommands wire the package into reproducible experiments:

    gen-data          write a planted-signal synthetic dataset
    train-han         train the attention-map network
    generate-hlat     write model-generated reference maps for a dataset
    train-vqa         train the answerer (unsupervised or supervised)
    eval              score map files / answer predictions, JSON report
    export-heatmaps   dump maps as CSV grids and grayscale PGM images
    gradcheck         finite-difference sweep over every model parameter

Every command is deterministic given (config, seed, dataset).  Values
resolve as: command-line flag > --config JSON file > built-in default.
The effective configuration is echoed into the output directory.
Diagnostics go to stderr; machine-readable results go to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import answerer, attention, data, metrics
from .attention import HanConfig, TrainConfig
from .answerer import VqaConfig
from .diffcore import check_gradients, save_checkpoint
from .encoders import SyntheticGridSpec
from .errors import ContractError, FileFormatError


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _resolve(ns, file_cfg: dict, name: str, default):
    cli_val = getattr(ns, name.replace("-", "_"), None)
    if cli_val is not None:
        return cli_val
    if name in file_cfg:
        return file_cfg[name]
    return default


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _echo_config(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(ns) -> int:
    fc = _load_config_file(ns.config)
    grid = SyntheticGridSpec(
        channels=_resolve(ns, fc, "channels", 32),
        side=_resolve(ns, fc, "side", 4),
        classes=_resolve(ns, fc, "classes", 8),
        attributes=_resolve(ns, fc, "attributes", 2),
        decoys=_resolve(ns, fc, "decoys", 3),
        beacon_amp=_resolve(ns, fc, "beacon_amp", 1.0),
        value_amp=_resolve(ns, fc, "value_amp", 0.5),
        noise_sigma=_resolve(ns, fc, "noise", 0.3),
        map_spread=_resolve(ns, fc, "map_spread", 0.4),
        map_amp=_resolve(ns, fc, "map_amp", 6.0),
    )
    spec = data.SynthDatasetSpec(
        train_count=_resolve(ns, fc, "train", 512),
        val_count=_resolve(ns, fc, "val", 128),
        grid=grid,
        votes_total=_resolve(ns, fc, "votes_total", 10),
        votes_true=_resolve(ns, fc, "votes_true", 7),
    )
    seed = _resolve(ns, fc, "seed", 0)
    dataset = data.gen_synthetic(spec, seed, ns.out)
    print(json.dumps({
        "out": str(ns.out), "seed": seed,
        "counts": dataset.split_counts(), "dims": dataset.dims,
    }, sort_keys=True))
    return 0


# -- train-han ----------------------------------------------------------------

def _han_config(ns, fc, dims) -> HanConfig:
    return HanConfig(
        channels=dims["channels"], side=dims["side"], vocab=dims["vocab"],
        embed_dim=_resolve(ns, fc, "embed_dim", 16),
        question_hidden=_resolve(ns, fc, "question_hidden", 16),
        joint_dim=_resolve(ns, fc, "joint_dim", 24),
        refine_hidden=_resolve(ns, fc, "refine_hidden", 16),
        glimpses=_resolve(ns, fc, "glimpses", 3),
        recurrent_refine=not ns.no_refine_recurrent,
        dropout=_resolve(ns, fc, "dropout", 0.0),
    )


def _train_config(ns, fc, default_steps=400, default_lr=3e-3) -> TrainConfig:
    return TrainConfig(
        steps=_resolve(ns, fc, "steps", default_steps),
        batch_size=_resolve(ns, fc, "batch_size", 64),
        lr=_resolve(ns, fc, "lr", default_lr),
        seed=_resolve(ns, fc, "seed", 0),
        eval_every=_resolve(ns, fc, "eval_every", 0),
    )


def cmd_train_han(ns) -> int:
    fc = _load_config_file(ns.config)
    dataset = data.load_dataset(ns.data)
    report = data.prepare_reference_maps(dataset)
    if report["count"]:
        print(f"hygiene: dropped {report['count']} all-zero maps: "
              f"{report['dropped']}", file=sys.stderr)
    cfg = _han_config(ns, fc, dataset.dims)
    tc = _train_config(ns, fc)
    out = Path(ns.out)
    _echo_config(out, {
        "command": "train-han", "data": str(ns.data),
        "model": cfg.__dict__, "train": tc.__dict__,
    })
    model, log = attention.train_han(dataset, cfg, tc)
    attention.write_log(out / "train_log.jsonl", log)
    meta = attention.han_meta(cfg, tc, tc.steps)
    save_checkpoint(out / "checkpoint.bin", model.store, meta)
    final = [r for r in log if "val_rank_correlation" in r]
    result = {
        "checkpoint": str(out / "checkpoint.bin"),
        "steps": tc.steps,
        "final_loss": [r for r in log if "loss" in r][-1]["loss"],
        "val_rank_correlation": final[-1]["val_rank_correlation"] if final else None,
    }
    _write_json(out / "metrics.json", result)
    print(json.dumps(result, sort_keys=True))
    return 0


# -- generate-hlat --------------------------------------------------------------

def cmd_generate_hlat(ns) -> int:
    dataset = data.load_dataset(ns.data)
    model, meta = attention.load_han(ns.checkpoint)
    checkpoint_id = f"{Path(ns.checkpoint).name}:{_file_digest(ns.checkpoint)}"
    manifest = data.generate_hlat(dataset, model, ns.out, checkpoint_id)
    print(json.dumps({
        "out": str(ns.out), "count": manifest["count"],
        "han_checkpoint": checkpoint_id,
    }, sort_keys=True))
    return 0


# -- train-vqa --------------------------------------------------------------

def _vqa_config(ns, fc, dims) -> VqaConfig:
    return VqaConfig(
        channels=dims["channels"], side=dims["side"], vocab=dims["vocab"],
        classes=dims["classes"],
        embed_dim=_resolve(ns, fc, "embed_dim", 16),
        question_hidden=_resolve(ns, fc, "question_hidden", 16),
        joint_dim=_resolve(ns, fc, "joint_dim", 24),
        rank=_resolve(ns, fc, "rank", 16),
        glimpses=_resolve(ns, fc, "glimpses", 2),
        sup_hidden=_resolve(ns, fc, "sup_hidden", 16),
        supervised=ns.supervised,
        lam=_resolve(ns, fc, "lam", 1.0),
        loss_all_candidates=ns.loss_all_candidates,
        dropout=_resolve(ns, fc, "dropout", 0.0),
    )


def _write_predictions(path, model, samples, answer_strings, batch=256) -> None:
    with open(path, "w") as f:
        for lo in range(0, len(samples), batch):
            chunk = samples[lo:lo + batch]
            cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in chunk])
            dist, _ = model.predict_batch(cells3d, [s.tokens for s in chunk])
            for row, s in zip(dist, chunk):
                idx = answerer.answer(row)
                rec = {
                    "id": s.id, "answer_id": idx,
                    "answer": answer_strings[idx],
                    "probability": float(row[idx]),
                }
                if s.answer_type is not None:
                    rec["answer_type"] = s.answer_type
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_attention_readout(out_dir: Path, model, samples, side: int, batch=256) -> None:
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    entries = []
    from .fileio import write_attention_map

    for lo in range(0, len(samples), batch):
        chunk = samples[lo:lo + batch]
        cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in chunk])
        _, readout = model.predict_batch(cells3d, [s.tokens for s in chunk])
        for row, s in zip(readout, chunk):
            write_attention_map(out_dir / "maps" / f"{s.id}.bin", row, side)
            entries.append({"id": s.id, "split": s.split, "map": f"maps/{s.id}.bin"})
    _write_json(out_dir / "manifest.json", {
        "format_version": data.MANIFEST_VERSION,
        "kind": "attention-maps",
        "provenance": {"generator": "vqa-attention-readout"},
        "maps_normalized": True,
        "side": side,
        "count": len(entries),
        "samples": entries,
    })


def cmd_train_vqa(ns) -> int:
    fc = _load_config_file(ns.config)
    dataset = data.load_dataset(ns.data)
    cfg = _vqa_config(ns, fc, dataset.dims)
    tc = _train_config(ns, fc, default_steps=600, default_lr=3e-3)

    ref_maps = None
    if cfg.supervised:
        if ns.maps:
            ref_maps, _ = data.load_maps_dir(ns.maps)
        else:
            data.prepare_reference_maps(dataset)
            ref_maps = {s.id: s.ref_map for s in dataset.samples if s.ref_map is not None}
        missing = [s.id for s in dataset.split_samples("train") if s.id not in ref_maps]
        if missing:
            raise ContractError(
                f"supervised mode: {len(missing)} training samples lack reference maps"
            )

    out = Path(ns.out)
    _echo_config(out, {
        "command": "train-vqa", "data": str(ns.data),
        "maps": str(ns.maps) if ns.maps else None,
        "model": cfg.__dict__, "train": tc.__dict__,
    })
    model, log = answerer.train_vqa(dataset, cfg, tc, ref_maps)
    attention.write_log(out / "train_log.jsonl", log)
    meta = answerer.vqa_meta(cfg, tc, tc.steps)
    save_checkpoint(out / "checkpoint.bin", model.store, meta)

    val = dataset.split_samples("val")
    if val:
        _write_predictions(out / "predictions.jsonl", model, val, dataset.answers)
        _write_attention_readout(out / "val_attention", model, val, cfg.side)
    evals = [r for r in log if "val_accuracy" in r]
    result = {
        "checkpoint": str(out / "checkpoint.bin"),
        "mode": "supervised" if cfg.supervised else "unsupervised",
        "steps": tc.steps,
        "final_loss": [r for r in log if "loss" in r][-1]["loss"],
        "val_accuracy": evals[-1]["val_accuracy"] if evals else None,
        "val_rank_correlation": evals[-1]["val_rank_correlation"] if evals else None,
    }
    _write_json(out / "metrics.json", result)
    print(json.dumps(result, sort_keys=True))
    return 0


# -- eval ---------------------------------------------------------------------

def _per_sample_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "value"])
        w.writerows(rows)


def _eval_maps(pred_dir, dataset, denom: str, workers: int, per_sample) -> dict:
    pred_maps, _ = data.load_maps_dir(pred_dir)
    pairs = []
    for s in dataset.samples:
        if s.id in pred_maps and s.ref_map is not None:
            pairs.append((s.id, pred_maps[s.id], s.ref_map))
    if not pairs:
        raise ContractError("no overlapping (prediction, reference) map pairs")

    def one(pair):
        sid, pred, ref = pair
        return sid, metrics.mean_rank_correlation(pred, [ref], denom=denom)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, pairs))
    else:
        rows = [one(p) for p in pairs]
    values = [v for _, v in rows]
    mean, sem = metrics.mean_and_sem(values)
    report = {
        "metric": "mean_rank_correlation",
        "mean": mean, "sem": sem, "count": len(values),
        "per_sample": str(per_sample) if per_sample else None,
    }
    if per_sample:
        _per_sample_csv(per_sample, rows)
    return report


def _eval_answers(pred_file, dataset, per_sample) -> dict:
    by_id = dataset.by_id()
    rows = []
    with open(pred_file) as f:
        for line in f:
            rec = json.loads(line)
            s = by_id.get(rec["id"])
            if s is None or s.votes is None:
                continue
            rows.append((rec["id"], metrics.consensus_accuracy(rec["answer"], s.votes)))
    if not rows:
        raise ContractError("no predictions matched samples with answer votes")
    values = [v for _, v in rows]
    mean, sem = metrics.mean_and_sem(values)
    report = {
        "metric": "consensus_accuracy",
        "mean": mean, "sem": sem, "count": len(values),
        "per_sample": str(per_sample) if per_sample else None,
    }
    if per_sample:
        _per_sample_csv(per_sample, rows)
    return report


def cmd_eval(ns) -> int:
    dataset = data.load_dataset(ns.data)
    reports = []
    if ns.pred_maps:
        per_sample = ns.per_sample_maps
        reports.append(_eval_maps(ns.pred_maps, dataset, ns.spearman_denom,
                                  ns.workers, per_sample))
    if ns.predictions:
        reports.append(_eval_answers(ns.predictions, dataset, ns.per_sample_answers))
    if not reports:
        _err("eval: nothing to do (pass --pred-maps and/or --predictions)")
        return 2
    out = {"reports": reports}
    if ns.report:
        _write_json(ns.report, out)
    print(json.dumps(out, sort_keys=True))
    return 0


# -- export-heatmaps --------------------------------------------------------

def _write_pgm(path, cells: np.ndarray) -> None:
    """Portable grayscale image, one byte per cell scaled by the max."""
    peak = cells.max()
    scaled = np.zeros_like(cells) if peak <= 0 else cells / peak
    byte_rows = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{cells.shape[1]} {cells.shape[0]}\n255\n".encode())
        f.write(byte_rows.tobytes())


def _write_map_csv(path, cells: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in cells:
            w.writerow([repr(float(x)) for x in row])


def cmd_export_heatmaps(ns) -> int:
    maps, manifest = data.load_maps_dir(ns.maps)
    other = None
    if ns.compare:
        other, _ = data.load_maps_dir(ns.compare)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    side = manifest["side"]
    ids = sorted(maps)
    if ns.limit:
        ids = ids[: ns.limit]
    for sid in ids:
        cells = maps[sid].reshape(side, side)
        _write_map_csv(out / f"{sid}.csv", cells)
        _write_pgm(out / f"{sid}.pgm", cells)
        if other is not None and sid in other:
            right = other[sid].reshape(side, side)
            divider = np.full((side, 1), max(cells.max(), right.max()))
            _write_pgm(out / f"{sid}_pair.pgm", np.hstack([cells, divider, right]))
    print(json.dumps({"out": str(out), "count": len(ids)}, sort_keys=True))
    return 0


# -- gradcheck ----------------------------------------------------------------

def _gradcheck_batch(rng, side=4, channels=32, vocab=16, classes=8):
    """Two tiny random samples for the finite-difference sweep."""
    cells3d = rng.normal(0, 0.5, size=(2, side * side, channels))
    tokens = [[1, 2, 3], [4, 5, 6, 7]]
    answers_idx = np.array([1, 3])
    raw = rng.normal(0, 1.0, size=(2, side * side))
    refs = np.exp(raw - raw.max(axis=1, keepdims=True))
    refs /= refs.sum(axis=1, keepdims=True)
    return cells3d, tokens, answers_idx, refs


def gradcheck_reports(seed: int = 0, h: float = 1e-5) -> dict[str, dict[str, float]]:
    """Finite-difference sweeps at toy dims for the map network and both
    answerer modes; returns per-parameter max relative errors."""
    rng = np.random.default_rng(seed)
    cells3d, tokens, answers_idx, refs = _gradcheck_batch(rng)

    han_cfg = HanConfig(channels=32, side=4, vocab=16, embed_dim=16,
                        question_hidden=16, joint_dim=24, refine_hidden=16,
                        glimpses=3)
    han = attention.HanModel(han_cfg, np.random.default_rng(seed + 1))
    reports = {
        "han_mse": check_gradients(
            lambda: han.loss_batch(cells3d, tokens, refs), han.store, h=h
        )
    }

    sup_cfg = VqaConfig(channels=32, side=4, vocab=16, classes=8, embed_dim=16,
                        question_hidden=16, joint_dim=24, rank=16, glimpses=3,
                        sup_hidden=16, supervised=True, lam=1.0)
    sup = answerer.VqaModel(sup_cfg, np.random.default_rng(seed + 2),
                            branch_rng=np.random.default_rng(seed + 3))
    reports["vqa_supervised_total"] = check_gradients(
        lambda: sup.loss_batch(cells3d, tokens, answers_idx, refs)[0], sup.store, h=h
    )

    uns_cfg = VqaConfig(channels=32, side=4, vocab=16, classes=8, embed_dim=16,
                        question_hidden=16, joint_dim=24, rank=16, glimpses=2,
                        sup_hidden=16, supervised=False)
    uns = answerer.VqaModel(uns_cfg, np.random.default_rng(seed + 4))
    reports["vqa_unsupervised_cls"] = check_gradients(
        lambda: uns.loss_batch(cells3d, tokens, answers_idx)[0], uns.store, h=h
    )
    return reports


def cmd_gradcheck(ns) -> int:
    reports = gradcheck_reports(seed=ns.seed if ns.seed is not None else 0, h=ns.h)
    worst = 0.0
    failures = []
    for model_name, report in reports.items():
        for param, err in report.items():
            worst = max(worst, err)
            if err >= ns.threshold:
                failures.append(f"{model_name}/{param}: {err:.3e}")
    print(json.dumps({
        "threshold": ns.threshold,
        "max_relative_error": worst,
        "parameters_checked": sum(len(r) for r in reports.values()),
        "reports": reports,
        "failures": failures,
    }, sort_keys=True))
    if failures:
        _err(f"gradcheck failed for {len(failures)} parameters")
        return 1
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="hanvqa",
        description="attention-map prediction and attention-supervised answering, desk scale",
    )
    sub = top.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, default=None)

    g = sub.add_parser("gen-data", help="generate a planted-signal synthetic dataset")
    add_common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, default=None, help="training sample count")
    g.add_argument("--val", type=int, default=None, help="validation sample count")
    g.add_argument("--side", type=int, default=None, help="grid side length")
    g.add_argument("--channels", type=int, default=None)
    g.add_argument("--classes", type=int, default=None)
    g.add_argument("--attributes", type=int, default=None)
    g.add_argument("--decoys", type=int, default=None)
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--map-spread", type=float, default=None,
                   help="ground-truth mass decay per ring around the signal cell (0 = one-hot)")
    g.add_argument("--map-amp", type=float, default=None,
                   help="raw peak height of ground-truth maps before softmax normalization")
    g.add_argument("--beacon-amp", type=float, default=None)
    g.add_argument("--value-amp", type=float, default=None)
    g.add_argument("--votes-total", type=int, default=None)
    g.add_argument("--votes-true", type=int, default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-han", help="train the attention-map network")
    add_common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--glimpses", type=int, default=None)
    t.add_argument("--joint-dim", type=int, default=None)
    t.add_argument("--refine-hidden", type=int, default=None)
    t.add_argument("--embed-dim", type=int, default=None)
    t.add_argument("--question-hidden", type=int, default=None)
    t.add_argument("--dropout", type=float, default=None)
    t.add_argument("--eval-every", type=int, default=None)
    t.add_argument("--no-refine-recurrent", action="store_true",
                   help="replace the recurrent refinement with the averaged-map head")
    t.set_defaults(func=cmd_train_han)

    h = sub.add_parser("generate-hlat", help="write model-generated reference maps")
    add_common(h)
    h.add_argument("--data", required=True)
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_generate_hlat)

    v = sub.add_parser("train-vqa", help="train the answering model")
    add_common(v)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--supervised", action="store_true")
    v.add_argument("--maps", default=None,
                   help="attention-map directory used as supervision targets")
    v.add_argument("--lam", type=float, default=None,
                   help="weight of the attention-supervision loss term")
    v.add_argument("--steps", type=int, default=None)
    v.add_argument("--batch-size", type=int, default=None)
    v.add_argument("--lr", type=float, default=None)
    v.add_argument("--glimpses", type=int, default=None)
    v.add_argument("--joint-dim", type=int, default=None)
    v.add_argument("--rank", type=int, default=None)
    v.add_argument("--sup-hidden", type=int, default=None)
    v.add_argument("--embed-dim", type=int, default=None)
    v.add_argument("--question-hidden", type=int, default=None)
    v.add_argument("--dropout", type=float, default=None)
    v.add_argument("--eval-every", type=int, default=None)
    v.add_argument("--loss-all-candidates", action="store_true",
                   help="average -log p over every candidate answer instead of the label")
    v.set_defaults(func=cmd_train_vqa)

    e = sub.add_parser("eval", help="score predictions against a dataset")
    add_common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--pred-maps", default=None, help="attention-map directory to score")
    e.add_argument("--predictions", default=None, help="answer predictions jsonl")
    e.add_argument("--report", default=None, help="write the JSON report here too")
    e.add_argument("--per-sample-maps", default=None, help="CSV of per-sample correlations")
    e.add_argument("--per-sample-answers", default=None, help="CSV of per-sample accuracies")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--spearman-denom", choices=["standard", "grid"], default="standard")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-heatmaps", help="dump maps as CSV and PGM images")
    add_common(x)
    x.add_argument("--maps", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--compare", default=None,
                   help="second map directory for side-by-side images")
    x.add_argument("--limit", type=int, default=None)
    x.set_defaults(func=cmd_export_heatmaps)

    c = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    add_common(c)
    c.add_argument("--threshold", type=float, default=1e-4)
    c.add_argument("--h", type=float, default=1e-5)
    c.set_defaults(func=cmd_gradcheck)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except (ContractError, FileFormatError, FileNotFoundError) as e:
        _err(str(e))
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
