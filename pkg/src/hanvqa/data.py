"""Dataset layout, hygiene rules, the planted-signal synthetic task and
reference-map generation with a trained attention network.

On-disk layout of a dataset directory:

    manifest.json     counts, dims, provenance, normalization flag
    vocab.txt         one token per line, line number = token id
    answers.txt       one candidate answer string per line
    questions.jsonl   {"id", "split", "tokens", "answer", "answer_type",
                       "votes"?} per line
    features/<id>.bin feature grids (fileio format)
    maps/<id>.bin     reference attention maps (fileio format)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import SyntheticGridSpec, synth_features, UNK_TOKEN
from .errors import ContractError, FileFormatError
from .fileio import (FeatureGrid, read_attention_map, read_feature_grid,
                     write_attention_map, write_feature_grid)

MANIFEST_VERSION = 1


@dataclass
class Sample:
    id: str
    split: str
    grid: FeatureGrid
    tokens: list[int]
    answer: int | None = None
    votes: list[str] | None = None
    ref_map: np.ndarray | None = None
    answer_type: str | None = None


@dataclass
class Dataset:
    root: Path | None
    dims: dict
    provenance: dict
    maps_normalized: bool
    samples: list[Sample]
    vocab: list[str]
    answers: list[str]

    def split_samples(self, split: str) -> list[Sample]:
        return [s for s in self.samples if s.split == split]

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.samples:
            counts[s.split] = counts.get(s.split, 0) + 1
        return counts

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


# -- hygiene ---------------------------------------------------------------

def clean(dataset: Dataset) -> tuple[Dataset, dict]:
    """Drop samples whose reference map is identically zero.

    Returns the dataset plus a report listing the dropped ids; applying
    it twice changes nothing.
    """
    dropped = [
        s.id for s in dataset.samples
        if s.ref_map is not None and not np.any(s.ref_map)
    ]
    if dropped:
        gone = set(dropped)
        dataset.samples = [s for s in dataset.samples if s.id not in gone]
    return dataset, {"dropped": dropped, "count": len(dropped)}


def _softmax_1d(v: np.ndarray) -> np.ndarray:
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def normalize_refs(dataset: Dataset) -> Dataset:
    """Replace every reference map with its softmax (temperature 1).

    Softmax is not idempotent, so this must run exactly once per
    pipeline; the manifest flag enforces that.
    """
    if dataset.maps_normalized:
        raise ContractError(
            "reference maps are already normalized (manifest flag is set); "
            "normalizing twice would change them"
        )
    for s in dataset.samples:
        if s.ref_map is not None:
            s.ref_map = _softmax_1d(s.ref_map)
    dataset.maps_normalized = True
    return dataset


def prepare_reference_maps(dataset: Dataset) -> dict:
    """Standard hygiene pipeline: drop all-zero maps, then normalize.

    No-op (empty report) when the maps are already normalized.
    """
    if dataset.maps_normalized:
        return {"dropped": [], "count": 0}
    _, report = clean(dataset)
    normalize_refs(dataset)
    return report


# -- synthetic dataset -------------------------------------------------------

_FILLER_TOKENS = ["what", "is", "the", "value", "of", "tell", "me"]


@dataclass
class SynthDatasetSpec:
    """Sizes and difficulty of a generated dataset."""

    train_count: int = 512
    val_count: int = 128
    grid: SyntheticGridSpec = field(default_factory=SyntheticGridSpec)
    votes_total: int = 10
    votes_true: int = 7

    def __post_init__(self):
        if self.train_count < 1 or self.val_count < 0:
            raise ContractError("dataset needs at least one training sample")
        if not 0 <= self.votes_true <= self.votes_total:
            raise ContractError(
                f"votes_true {self.votes_true} must lie in [0, {self.votes_total}]"
            )

    def build_vocab(self) -> list[str]:
        attrs = [f"attr{a}" for a in range(self.grid.attributes)]
        return [UNK_TOKEN, *_FILLER_TOKENS, *attrs]

    def build_answers(self) -> list[str]:
        return [f"ans{k}" for k in range(self.grid.classes)]

    def attr_token(self, a: int) -> int:
        return 1 + len(_FILLER_TOKENS) + a


def _question_tokens(spec: SynthDatasetSpec, attribute: int, template: int) -> list[int]:
    # template 0: "what is the value of attrA" / template 1: "tell me attrA"
    attr = spec.attr_token(attribute)
    if template == 0:
        return [1, 2, 3, 4, 5, attr]
    return [6, 7, attr]


def gen_synthetic(spec: SynthDatasetSpec, seed: int, out_dir) -> Dataset:
    """Generate and write a planted-signal dataset; byte-identical for a
    fixed (spec, seed)."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(parents=True, exist_ok=True)

    vocab = spec.build_vocab()
    answers = spec.build_answers()
    samples: list[Sample] = []
    records: list[dict] = []
    counts = {"train": spec.train_count, "val": spec.val_count}
    for split in ("train", "val"):
        for i in range(counts[split]):
            sid = f"{split}-{i:05d}"
            grid_seed = int(rng.integers(0, 2**63 - 1))
            grid, info = synth_features(spec.grid, grid_seed)
            attribute = int(rng.integers(0, spec.grid.attributes))
            template = int(rng.integers(0, 2))
            tokens = _question_tokens(spec, attribute, template)
            answer_idx = info.values[attribute]
            ref = spec.grid.reference_map(info.signal_cell)
            votes = None
            if split == "val":
                votes = [answers[answer_idx]] * spec.votes_true
                for _ in range(spec.votes_total - spec.votes_true):
                    wrong = (answer_idx + 1 + int(rng.integers(0, spec.grid.classes - 1))) \
                        % spec.grid.classes
                    votes.append(answers[wrong])
            write_feature_grid(out / "features" / f"{sid}.bin", grid)
            write_attention_map(out / "maps" / f"{sid}.bin", ref, spec.grid.side)
            samples.append(Sample(
                id=sid, split=split, grid=grid, tokens=tokens, answer=answer_idx,
                votes=votes, ref_map=ref, answer_type=f"attr{attribute}",
            ))
            rec = {
                "id": sid, "split": split, "tokens": tokens,
                "answer": answer_idx, "answer_type": f"attr{attribute}",
            }
            if votes is not None:
                rec["votes"] = votes
            records.append(rec)

    (out / "vocab.txt").write_text("\n".join(vocab) + "\n")
    (out / "answers.txt").write_text("\n".join(answers) + "\n")
    with open(out / "questions.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    manifest = {
        "format_version": MANIFEST_VERSION,
        "dims": {
            "channels": spec.grid.channels,
            "side": spec.grid.side,
            "vocab": len(vocab),
            "classes": spec.grid.classes,
        },
        "provenance": {
            "generator": "synthetic-planted",
            "seed": seed,
            "noise_sigma": spec.grid.noise_sigma,
            "attributes": spec.grid.attributes,
            "decoys": spec.grid.decoys,
            "beacon_amp": spec.grid.beacon_amp,
            "value_amp": spec.grid.value_amp,
            "map_spread": spec.grid.map_spread,
        },
        "maps_normalized": False,
        "splits": {split: {"count": counts[split]} for split in ("train", "val")},
        "samples": [
            {
                "id": s.id, "split": s.split,
                "features": f"features/{s.id}.bin",
                "map": f"maps/{s.id}.bin",
            }
            for s in samples
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return Dataset(
        root=out, dims=manifest["dims"], provenance=manifest["provenance"],
        maps_normalized=False, samples=samples, vocab=vocab, answers=answers,
    )


# -- loading -----------------------------------------------------------------

def load_dataset(root) -> Dataset:
    """Load a dataset directory; the manifest dims are authoritative and
    any file contradicting them fails loading."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise FileFormatError(
            f"{root}/manifest.json: unsupported format_version {manifest.get('format_version')}"
        )
    dims = manifest["dims"]
    vocab = (root / "vocab.txt").read_text().splitlines()
    answers = (root / "answers.txt").read_text().splitlines()
    if len(vocab) != dims["vocab"]:
        raise FileFormatError(
            f"vocab.txt has {len(vocab)} entries, manifest says {dims['vocab']}"
        )
    if len(answers) != dims["classes"]:
        raise FileFormatError(
            f"answers.txt has {len(answers)} entries, manifest says {dims['classes']}"
        )
    records = {}
    with open(root / "questions.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            records[rec["id"]] = rec

    samples = []
    for entry in manifest["samples"]:
        sid = entry["id"]
        rec = records.get(sid)
        if rec is None:
            raise FileFormatError(f"sample {sid} missing from questions.jsonl")
        grid = read_feature_grid(root / entry["features"])
        if grid.channels != dims["channels"] or grid.side != dims["side"]:
            raise FileFormatError(
                f"{entry['features']}: grid ({grid.channels}, side {grid.side}) "
                f"contradicts manifest dims {dims}"
            )
        ref = None
        if entry.get("map"):
            ref, side = read_attention_map(root / entry["map"])
            if side != dims["side"]:
                raise FileFormatError(
                    f"{entry['map']}: side {side} contradicts manifest side {dims['side']}"
                )
        samples.append(Sample(
            id=sid, split=entry["split"], grid=grid, tokens=list(rec["tokens"]),
            answer=rec.get("answer"), votes=rec.get("votes"), ref_map=ref,
            answer_type=rec.get("answer_type"),
        ))
    counts = {}
    for s in samples:
        counts[s.split] = counts.get(s.split, 0) + 1
    for split, info in manifest["splits"].items():
        if counts.get(split, 0) != info["count"]:
            raise FileFormatError(
                f"split {split!r}: manifest count {info['count']} != {counts.get(split, 0)} records"
            )
    return Dataset(
        root=root, dims=dims, provenance=manifest["provenance"],
        maps_normalized=bool(manifest["maps_normalized"]),
        samples=samples, vocab=vocab, answers=answers,
    )


# -- generated reference maps (HLAT-style) ------------------------------------

def generate_hlat(dataset: Dataset, han_model, out_dir, checkpoint_id: str,
                  batch: int = 256) -> dict:
    """Predict one attention map per sample with a trained network and
    write them as a map directory with provenance."""
    cfg = han_model.config
    if cfg.channels != dataset.dims["channels"] or cfg.side != dataset.dims["side"] \
            or cfg.vocab != dataset.dims["vocab"]:
        raise ContractError(
            f"model dims (m={cfg.channels}, l={cfg.side}, z={cfg.vocab}) do not match "
            f"dataset dims {dataset.dims}"
        )
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    entries = []
    for lo in range(0, len(dataset.samples), batch):
        chunk = dataset.samples[lo:lo + batch]
        cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in chunk])
        maps = han_model.predict_map_array(cells3d, [s.tokens for s in chunk])
        for row, s in zip(maps, chunk):
            if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-9:
                raise ContractError(f"predicted map for {s.id} is not on the simplex")
            write_attention_map(out / "maps" / f"{s.id}.bin", row, cfg.side)
            entries.append({"id": s.id, "split": s.split, "map": f"maps/{s.id}.bin"})
    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": "attention-maps",
        "provenance": {"generator": "hlat", "han_checkpoint": checkpoint_id},
        "maps_normalized": True,
        "side": cfg.side,
        "count": len(entries),
        "samples": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def load_maps_dir(root) -> tuple[dict[str, np.ndarray], dict]:
    """Read a map directory written by generate_hlat: (id -> map, manifest)."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("kind") != "attention-maps":
        raise FileFormatError(f"{root}: not an attention-map directory")
    maps = {}
    for entry in manifest["samples"]:
        values, side = read_attention_map(root / entry["map"])
        if side != manifest["side"]:
            raise FileFormatError(
                f"{entry['map']}: side {side} contradicts manifest side {manifest['side']}"
            )
        maps[entry["id"]] = values
    return maps, manifest
