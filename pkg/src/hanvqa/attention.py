"""Attention-map prediction network: bilinear fusion of question and
grid features, multi-glimpse score maps, recurrent refinement to a single
simplex map, and mean-squared training against reference maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffcore import AdamState, ParameterStore, Tape, Tensor, adam_step, ops
from .encoders import GruCell, QuestionEncoder
from .errors import ContractError
from .fileio import FeatureGrid
from . import metrics


@dataclass
class HanConfig:
    channels: int = 32        # feature channels per cell (m)
    side: int = 4             # grid side (l); cells = side**2
    vocab: int = 16           # vocabulary size (z)
    embed_dim: int = 16       # word embedding size (e)
    question_hidden: int = 16 # question vector size (n)
    joint_dim: int = 24       # fused embedding size (d)
    refine_hidden: int = 16   # refinement recurrence size (p)
    glimpses: int = 3         # score maps generated per pair (G)
    recurrent_refine: bool = True
    dropout: float = 0.0
    max_question_len: int = 32

    @property
    def cells(self) -> int:
        return self.side * self.side


class AttentionStage:
    """Shared front end: question/feature fusion plus glimpse scoring.

    Used by both the map-prediction network and the answering models, so
    the two share one implementation of the fused representation.
    """

    def __init__(self, store: ParameterStore, rng: np.random.Generator,
                 question_hidden: int, channels: int, joint_dim: int, glimpses: int):
        self.joint_dim = joint_dim
        self.glimpses = glimpses
        self.q_proj = store.create_glorot("fuse.q_proj", rng, (question_hidden, joint_dim))
        self.q_bias = store.create_zeros("fuse.q_bias", (joint_dim,))
        self.v_proj = store.create_glorot("fuse.v_proj", rng, (channels, joint_dim))
        self.v_bias = store.create_zeros("fuse.v_bias", (joint_dim,))
        self.kernels = store.create_glorot("glimpse.kernels", rng, (joint_dim, glimpses))
        self.kernel_bias = store.create_zeros("glimpse.bias", (glimpses,))

    def fused(self, q: Tensor, cells2d: Tensor, n_cells: int) -> Tensor:
        """q (B, n) and flattened cells (B*L, m) -> fused (B*L, d)."""
        uq = ops.tanh(ops.add(ops.matmul(q, self.q_proj), self.q_bias))
        vf = ops.tanh(ops.add(ops.matmul(cells2d, self.v_proj), self.v_bias))
        return ops.mul(ops.repeat_rows(uq, n_cells), vf)

    def glimpse_stack(self, fused: Tensor, batch: int, n_cells: int) -> list[Tensor]:
        """Per-cell linear scores, one (B, L) map per glimpse."""
        scores = ops.add(ops.matmul(fused, self.kernels), self.kernel_bias)
        return [
            ops.reshape(ops.slice_cols(scores, g, g + 1), (batch, n_cells))
            for g in range(self.glimpses)
        ]


class HanModel:
    """Question + features -> refined attention map on the simplex."""

    def __init__(self, config: HanConfig, rng: np.random.Generator):
        self.config = config
        self.store = ParameterStore()
        self.question = QuestionEncoder(
            self.store, config.vocab, config.embed_dim, config.question_hidden,
            rng, max_len=config.max_question_len,
        )
        self.stage = AttentionStage(
            self.store, rng, config.question_hidden, config.channels,
            config.joint_dim, config.glimpses,
        )
        self.refine_cell = GruCell(
            self.store, "refine.gru", config.cells, config.refine_hidden, rng
        )
        self.out_w = self.store.create_glorot(
            "refine.out_w", rng, (config.refine_hidden, config.cells)
        )
        self.out_b = self.store.create_zeros("refine.out_b", (config.cells,))

    # -- forward pieces -------------------------------------------------

    def glimpse_stack_batch(self, cells3d: np.ndarray, token_rows,
                            dropout_rng: np.random.Generator | None = None) -> list[Tensor]:
        batch, n_cells, channels = cells3d.shape
        if channels != self.config.channels or n_cells != self.config.cells:
            raise ContractError(
                f"feature batch {cells3d.shape[1:]} vs model (cells={self.config.cells}, m={self.config.channels})"
            )
        q = self.question.encode_batch(token_rows)
        cells2d = Tensor(cells3d.reshape(batch * n_cells, channels))
        fused = self.stage.fused(q, cells2d, n_cells)
        if self.config.dropout > 0 and dropout_rng is not None:
            fused = ops.dropout(fused, self.config.dropout, dropout_rng)
        return self.stage.glimpse_stack(fused, batch, n_cells)

    def refine_batch(self, stack: list[Tensor]) -> Tensor:
        batch = stack[0].shape[0]
        h = Tensor(np.zeros((batch, self.config.refine_hidden)))
        for alpha in stack:
            h = self.refine_cell.step(alpha, h)
        logits = ops.add(ops.matmul(h, self.out_w), self.out_b)
        return ops.softmax(logits)

    def mean_refine_batch(self, stack: list[Tensor]) -> Tensor:
        total = stack[0]
        for alpha in stack[1:]:
            total = ops.add(total, alpha)
        return ops.softmax(ops.scale(total, 1.0 / len(stack)))

    def predicted_maps(self, cells3d: np.ndarray, token_rows,
                       dropout_rng: np.random.Generator | None = None) -> Tensor:
        stack = self.glimpse_stack_batch(cells3d, token_rows, dropout_rng)
        if self.config.recurrent_refine:
            return self.refine_batch(stack)
        return self.mean_refine_batch(stack)

    def loss_batch(self, cells3d: np.ndarray, token_rows, refs: np.ndarray,
                   dropout_rng: np.random.Generator | None = None) -> Tensor:
        pred = self.predicted_maps(cells3d, token_rows, dropout_rng)
        return ops.mean_over(ops.square(ops.sub(pred, Tensor(refs))))

    def predict_map_array(self, cells3d: np.ndarray, token_rows) -> np.ndarray:
        """Forward-only batch prediction (no tape)."""
        return self.predicted_maps(cells3d, token_rows).data


# -- single-pair operations (the contract surface) -----------------------

def fuse(q: Tensor, grid: FeatureGrid, model: HanModel | "object") -> Tensor:
    """Bilinear fusion for one pair: question vector (n,) and grid ->
    fused matrix (d, cells), entries in [-1, 1]."""
    stage = model.stage
    qrow = ops.reshape(q, (1, -1))
    cells2d = Tensor(np.ascontiguousarray(grid.values.T))
    fused = stage.fused(qrow, cells2d, grid.cells)
    return ops.transpose(fused)


def glimpses(fused_grid: Tensor, model: HanModel | "object") -> list[Tensor]:
    """Score each cell with every size-1 kernel: (d, L) -> G maps (L,)."""
    stage = model.stage
    n_cells = fused_grid.shape[1]
    scores = ops.add(ops.matmul(ops.transpose(fused_grid), stage.kernels), stage.kernel_bias)
    return [
        ops.reshape(ops.slice_cols(scores, g, g + 1), (n_cells,))
        for g in range(stage.glimpses)
    ]


def refine(stack: list[Tensor], model: HanModel) -> Tensor:
    """Recurrently encode the glimpse maps in generation order, then map
    the last hidden state to a simplex vector over cells."""
    if not stack:
        raise ContractError("refine: empty glimpse stack")
    rows = [ops.reshape(a, (1, -1)) for a in stack]
    out = model.refine_batch(rows)
    return ops.reshape(out, (out.shape[1],))


def mean_refine(stack: list[Tensor]) -> Tensor:
    """Ablation head: softmax of the elementwise mean of the maps."""
    if not stack:
        raise ContractError("mean_refine: empty glimpse stack")
    total = stack[0]
    for alpha in stack[1:]:
        total = ops.add(total, alpha)
    return ops.softmax(ops.scale(total, 1.0 / len(stack)))


def mse_loss(pred: Tensor, ref: Tensor) -> Tensor:
    """Mean over cells of the squared difference of two maps."""
    pred = ops.as_tensor(pred)
    ref = ops.as_tensor(ref)
    if pred.shape != ref.shape:
        raise ContractError(f"mse_loss length mismatch: {pred.shape} vs {ref.shape}")
    return ops.mean_over(ops.square(ops.sub(pred, ref)))


# -- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 400
    batch_size: int = 64
    lr: float = 3e-4
    seed: int = 0
    eval_every: int = 0       # 0: only at the end
    eval_batch: int = 256
    log_path: str | None = None


def _as_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index batches forever, reshuffling each epoch."""
    while True:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield order[lo:lo + batch_size]


def dataset_arrays(samples):
    """Stack sample fields for batched training: cells (N, L, m) plus
    token rows and reference maps (N, L)."""
    cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in samples])
    tokens = [s.tokens for s in samples]
    refs = np.stack([s.ref_map for s in samples])
    return cells3d, tokens, refs


def validation_rank_correlation(model: HanModel, samples, batch: int = 256) -> float:
    """Mean over samples of the rank correlation between the predicted
    map and the sample's reference map."""
    vals = []
    for lo in range(0, len(samples), batch):
        chunk = samples[lo:lo + batch]
        cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in chunk])
        pred = model.predict_map_array(cells3d, [s.tokens for s in chunk])
        for row, s in zip(pred, chunk):
            vals.append(metrics.mean_rank_correlation(row, [s.ref_map]))
    return float(np.mean(vals))


def train_han(dataset, config: HanConfig, train_cfg: TrainConfig):
    """Mini-batch Adam on the map MSE; returns (model, log records).

    Requires reference maps already on the simplex (run the dataset
    hygiene pipeline first).
    """
    train = dataset.split_samples("train")
    if not train:
        raise ContractError("train_han: empty training split")
    if not dataset.maps_normalized:
        raise ContractError("train_han: reference maps must be normalized first")

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_shuffle = np.random.default_rng(seeds[1])
    rng_dropout = np.random.default_rng(seeds[2])

    model = HanModel(config, rng_init)
    state = AdamState(model.store, lr=train_cfg.lr)
    cells3d, tokens, refs = dataset_arrays(train)
    val = dataset.split_samples("val")

    log: list[dict] = []
    batches = _as_batches(len(train), train_cfg.batch_size, rng_shuffle)
    for step in range(1, train_cfg.steps + 1):
        idx = next(batches)
        batch_tokens = [tokens[i] for i in idx]
        with Tape() as tape:
            loss = model.loss_batch(
                cells3d[idx], batch_tokens, refs[idx],
                rng_dropout if config.dropout > 0 else None,
            )
            model.store.zero_grad()
            tape.backward(loss)
        adam_step(model.store, state)
        log.append({"step": step, "loss": loss.item(), "lr": state.lr, "seed": train_cfg.seed})
        if train_cfg.eval_every and val and step % train_cfg.eval_every == 0:
            rc = validation_rank_correlation(model, val, train_cfg.eval_batch)
            log.append({"step": step, "val_rank_correlation": rc, "seed": train_cfg.seed})
    if val:
        rc = validation_rank_correlation(model, val, train_cfg.eval_batch)
        log.append({"step": train_cfg.steps, "val_rank_correlation": rc, "seed": train_cfg.seed})
    return model, log


def write_log(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def han_meta(config: HanConfig, train_cfg: TrainConfig, step_count: int) -> dict:
    return {
        "kind": "han",
        "format_version": 1,
        "hyperparameters": {
            "channels": config.channels,
            "side": config.side,
            "vocab": config.vocab,
            "embed_dim": config.embed_dim,
            "question_hidden": config.question_hidden,
            "joint_dim": config.joint_dim,
            "refine_hidden": config.refine_hidden,
            "glimpses": config.glimpses,
            "recurrent_refine": config.recurrent_refine,
            "dropout": config.dropout,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
        },
        "seed": train_cfg.seed,
        "step_count": step_count,
    }


def han_from_meta(meta: dict) -> HanConfig:
    h = meta["hyperparameters"]
    return HanConfig(
        channels=h["channels"], side=h["side"], vocab=h["vocab"],
        embed_dim=h["embed_dim"], question_hidden=h["question_hidden"],
        joint_dim=h["joint_dim"], refine_hidden=h["refine_hidden"],
        glimpses=h["glimpses"], recurrent_refine=h["recurrent_refine"],
        dropout=h["dropout"],
    )


def load_han(path) -> tuple[HanModel, dict]:
    """Rebuild a map-prediction model from a checkpoint file."""
    from .diffcore import load_checkpoint

    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "han":
        raise ContractError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected 'han'")
    model = HanModel(han_from_meta(meta), np.random.default_rng(0))
    model.store.load_arrays(arrays)
    return model, meta
