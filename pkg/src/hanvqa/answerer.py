"""Answering models: attentive pooling over the feature grid, low-rank
bilinear classification, and an optional supervision branch that pulls
the glimpse maps toward reference attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionStage, TrainConfig, mse_loss
from .diffcore import AdamState, ParameterStore, Tape, Tensor, adam_step, ops
from .encoders import GruCell, QuestionEncoder
from .errors import ContractError
from .fileio import FeatureGrid
from . import metrics

CLS_PROB_FLOOR = 1e-12


@dataclass
class VqaConfig:
    channels: int = 32
    side: int = 4
    vocab: int = 16
    classes: int = 8          # candidate answers (K)
    embed_dim: int = 16
    question_hidden: int = 16
    joint_dim: int = 24
    rank: int = 16            # classifier bilinear rank (r)
    glimpses: int = 2
    sup_hidden: int = 16      # supervision-branch recurrence size (p)
    supervised: bool = False
    lam: float = 1.0          # weight on the attention-supervision term
    loss_all_candidates: bool = False  # average -log p over every candidate
    dropout: float = 0.0
    max_question_len: int = 32

    @property
    def cells(self) -> int:
        return self.side * self.side

    @property
    def pooled_size(self) -> int:
        return self.channels * self.glimpses


class VqaModel:
    """Unsupervised or attention-supervised answerer.

    Both modes share the question encoder, fusion stage and classifier;
    the supervised mode adds a recurrent branch whose simplex output is
    regressed onto reference maps.  Shared parameters are initialized
    from one stream and branch parameters from a second, so a supervised
    model with lam=0 follows the exact float trajectory of an
    unsupervised one under the same seed.
    """

    def __init__(self, config: VqaConfig, rng: np.random.Generator,
                 branch_rng: np.random.Generator | None = None):
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
        s = config.pooled_size
        self.cls_q_proj = self.store.create_glorot("cls.q_proj", rng, (config.question_hidden, config.rank))
        self.cls_q_bias = self.store.create_zeros("cls.q_bias", (config.rank,))
        self.cls_f_proj = self.store.create_glorot("cls.f_proj", rng, (s, config.rank))
        self.cls_f_bias = self.store.create_zeros("cls.f_bias", (config.rank,))
        self.cls_out_w = self.store.create_glorot("cls.out_w", rng, (config.rank, config.classes))
        self.cls_out_b = self.store.create_zeros("cls.out_b", (config.classes,))
        self.sup_cell = None
        if config.supervised:
            brng = branch_rng if branch_rng is not None else rng
            self.sup_cell = GruCell(self.store, "sup.gru", config.cells, config.sup_hidden, brng)
            self.sup_out_w = self.store.create_glorot("sup.out_w", brng, (config.sup_hidden, config.cells))
            self.sup_out_b = self.store.create_zeros("sup.out_b", (config.cells,))

    # -- forward pieces -------------------------------------------------

    def encode_and_score(self, cells3d: np.ndarray, token_rows,
                         dropout_rng: np.random.Generator | None = None
                         ) -> tuple[Tensor, list[Tensor]]:
        """Question vectors plus pre-normalization glimpse score maps."""
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
        return q, self.stage.glimpse_stack(fused, batch, n_cells)

    def pool_batch(self, cells3d: np.ndarray, stack: list[Tensor]) -> Tensor:
        pooled = [
            ops.weighted_cell_sum(ops.softmax(alpha), cells3d) for alpha in stack
        ]
        return pooled[0] if len(pooled) == 1 else ops.concat_cols(pooled)

    def distribution_batch(self, q: Tensor, pooled: Tensor) -> Tensor:
        qa = ops.tanh(ops.add(ops.matmul(q, self.cls_q_proj), self.cls_q_bias))
        fa = ops.tanh(ops.add(ops.matmul(pooled, self.cls_f_proj), self.cls_f_bias))
        logits = ops.add(ops.matmul(ops.mul(qa, fa), self.cls_out_w), self.cls_out_b)
        return ops.softmax(logits)

    def branch_maps(self, stack: list[Tensor]) -> Tensor:
        if self.sup_cell is None:
            raise ContractError("supervision branch requested on an unsupervised model")
        batch = stack[0].shape[0]
        h = Tensor(np.zeros((batch, self.config.sup_hidden)))
        for alpha in stack:
            h = self.sup_cell.step(alpha, h)
        logits = ops.add(ops.matmul(h, self.sup_out_w), self.sup_out_b)
        return ops.softmax(logits)

    def cls_loss_batch(self, dist: Tensor, answers: np.ndarray) -> Tensor:
        if self.config.loss_all_candidates:
            return ops.neg(ops.mean_over(ops.log(ops.clamp_min(dist, CLS_PROB_FLOOR))))
        picked = ops.take_per_row(dist, answers)
        return ops.neg(ops.mean_over(ops.log(ops.clamp_min(picked, CLS_PROB_FLOOR))))

    def loss_batch(self, cells3d: np.ndarray, token_rows, answers: np.ndarray,
                   refs: np.ndarray | None = None,
                   dropout_rng: np.random.Generator | None = None):
        """Returns (total, cls, att) loss tensors; att is None when the
        supervision term is off (lam == 0 or unsupervised mode)."""
        q, stack = self.encode_and_score(cells3d, token_rows, dropout_rng)
        pooled = self.pool_batch(cells3d, stack)
        dist = self.distribution_batch(q, pooled)
        cls = self.cls_loss_batch(dist, answers)
        if not self.config.supervised or self.config.lam == 0.0:
            return cls, cls, None
        if refs is None:
            raise ContractError("supervised loss needs reference maps")
        att = ops.mean_over(ops.square(ops.sub(self.branch_maps(stack), Tensor(refs))))
        total = ops.add(cls, ops.scale(att, self.config.lam))
        return total, cls, att

    # -- forward-only evaluation -----------------------------------------

    def predict_batch(self, cells3d: np.ndarray, token_rows) -> tuple[np.ndarray, np.ndarray]:
        """Forward-only: (distributions (B, K), attention readout (B, L)).

        The readout is the mean over glimpses of the softmax-normalized
        score maps: the distribution the pooling step actually uses,
        defined identically for both modes so A/B comparisons are fair.
        """
        q, stack = self.encode_and_score(cells3d, token_rows)
        pooled = self.pool_batch(cells3d, stack)
        dist = self.distribution_batch(q, pooled)
        readout = np.mean([ops.softmax(a).data for a in stack], axis=0)
        return dist.data, readout


# -- single-pair operations (the contract surface) -----------------------

def attend_pool(grid: FeatureGrid, stack: list[Tensor]) -> Tensor:
    """Softmax each glimpse over cells, convex-combine the per-cell
    feature vectors, concatenate the pooled vectors: -> (m * G,)."""
    if not stack:
        raise ContractError("attend_pool: empty glimpse stack")
    cells3d = np.ascontiguousarray(grid.values.T)[None, :, :]
    for alpha in stack:
        if alpha.data.reshape(-1).size != grid.cells:
            raise ContractError(
                f"glimpse length {alpha.data.size} vs grid cells {grid.cells}"
            )
    pooled = [
        ops.weighted_cell_sum(ops.softmax(ops.reshape(a, (1, -1))), cells3d)
        for a in stack
    ]
    row = pooled[0] if len(pooled) == 1 else ops.concat_cols(pooled)
    return ops.reshape(row, (row.shape[1],))


def predict(q: Tensor, pooled: Tensor, model: VqaModel) -> Tensor:
    """Answer distribution for one pair: simplex vector of length K."""
    dist = model.distribution_batch(ops.reshape(q, (1, -1)), ops.reshape(pooled, (1, -1)))
    return ops.reshape(dist, (dist.shape[1],))


def cls_loss(dist: Tensor, truth: int) -> Tensor:
    """Cross-entropy against the labeled answer: -log dist[truth]."""
    dist = ops.as_tensor(dist)
    k = dist.data.reshape(-1).size
    if not 0 <= truth < k:
        raise ContractError(f"answer index {truth} out of range for {k} candidates")
    row = ops.reshape(dist, (1, -1))
    picked = ops.take_per_row(row, np.array([truth]))
    return ops.neg(ops.mean_over(ops.log(ops.clamp_min(picked, CLS_PROB_FLOOR))))


def answer(dist) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    values = dist.data if isinstance(dist, Tensor) else np.asarray(dist)
    return int(np.argmax(values))


def att_sup_loss(stack: list[Tensor], ref, model: VqaModel) -> Tensor:
    """Mean squared difference between the supervision branch's map and
    the reference map."""
    ref = ops.as_tensor(ref)
    rows = [ops.reshape(a, (1, -1)) for a in stack]
    branch = ops.reshape(model.branch_maps(rows), (ref.data.size,))
    return mse_loss(branch, ref)


def total_loss(sample, model: VqaModel, lam: float) -> Tensor:
    """Joint objective for one sample: cls + lam * attention supervision.

    With lam == 0 this is exactly the classification loss; the
    supervision branch is not evaluated at all.
    """
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    cells3d = np.ascontiguousarray(sample.grid.values.T)[None, :, :]
    q, stack = model.encode_and_score(cells3d, [sample.tokens])
    pooled = model.pool_batch(cells3d, stack)
    dist = model.distribution_batch(q, pooled)
    cls = model.cls_loss_batch(dist, np.array([sample.answer]))
    if lam == 0.0:
        return cls
    if sample.ref_map is None:
        raise ContractError("supervised loss needs a reference map on the sample")
    att = att_sup_loss(stack, sample.ref_map, model)
    return ops.add(cls, ops.scale(att, lam))


# -- training -------------------------------------------------------------

def vqa_dataset_arrays(samples, ref_maps: dict | None):
    cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in samples])
    tokens = [s.tokens for s in samples]
    answers = np.array([s.answer for s in samples], dtype=np.int64)
    refs = None
    if ref_maps is not None:
        missing = [s.id for s in samples if s.id not in ref_maps]
        if missing:
            raise ContractError(f"missing reference maps for samples: {missing[:5]}")
        refs = np.stack([ref_maps[s.id] for s in samples])
    return cells3d, tokens, answers, refs


def evaluate_vqa(model: VqaModel, samples, answer_strings, batch: int = 256):
    """Consensus accuracy plus attention rank correlation on a split."""
    accs, corrs = [], []
    for lo in range(0, len(samples), batch):
        chunk = samples[lo:lo + batch]
        cells3d = np.stack([np.ascontiguousarray(s.grid.values.T) for s in chunk])
        dist, readout = model.predict_batch(cells3d, [s.tokens for s in chunk])
        for row, att_row, s in zip(dist, readout, chunk):
            pred_idx = int(np.argmax(row))
            if s.votes:
                accs.append(metrics.consensus_accuracy(answer_strings[pred_idx], s.votes))
            else:
                accs.append(1.0 if pred_idx == s.answer else 0.0)
            if s.ref_map is not None:
                corrs.append(metrics.mean_rank_correlation(att_row, [s.ref_map]))
    acc = float(np.mean(accs)) if accs else float("nan")
    corr = float(np.mean(corrs)) if corrs else float("nan")
    return acc, corr


def train_vqa(dataset, config: VqaConfig, train_cfg: TrainConfig,
              ref_maps: dict | None = None):
    """Adam training of the answerer; supervised mode requires a
    reference map for every training sample (HLAT output or planted
    ground truth).  Returns (model, log records)."""
    train = dataset.split_samples("train")
    if not train:
        raise ContractError("train_vqa: empty training split")
    if config.supervised and ref_maps is None:
        raise ContractError("supervised training needs reference maps")

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(4)
    rng_init = np.random.default_rng(seeds[0])
    rng_branch = np.random.default_rng(seeds[1])
    rng_shuffle = np.random.default_rng(seeds[2])
    rng_dropout = np.random.default_rng(seeds[3])

    model = VqaModel(config, rng_init, branch_rng=rng_branch)
    state = AdamState(model.store, lr=train_cfg.lr)
    cells3d, tokens, answers, refs = vqa_dataset_arrays(
        train, ref_maps if config.supervised else None
    )
    val = dataset.split_samples("val")

    from .attention import _as_batches  # same shuffling scheme as the map model

    log: list[dict] = []
    batches = _as_batches(len(train), train_cfg.batch_size, rng_shuffle)
    for step in range(1, train_cfg.steps + 1):
        idx = next(batches)
        with Tape() as tape:
            total, cls, att = model.loss_batch(
                cells3d[idx], [tokens[i] for i in idx], answers[idx],
                refs[idx] if refs is not None else None,
                rng_dropout if config.dropout > 0 else None,
            )
            model.store.zero_grad()
            tape.backward(total)
        adam_step(model.store, state)
        log.append({
            "step": step,
            "loss": total.item(),
            "loss_cls": cls.item(),
            "loss_att": att.item() if att is not None else 0.0,
            "lr": state.lr,
            "seed": train_cfg.seed,
        })
        if train_cfg.eval_every and val and step % train_cfg.eval_every == 0:
            acc, corr = evaluate_vqa(model, val, dataset.answers, train_cfg.eval_batch)
            log.append({"step": step, "val_accuracy": acc,
                        "val_rank_correlation": corr, "seed": train_cfg.seed})
    if val:
        acc, corr = evaluate_vqa(model, val, dataset.answers, train_cfg.eval_batch)
        log.append({"step": train_cfg.steps, "val_accuracy": acc,
                    "val_rank_correlation": corr, "seed": train_cfg.seed})
    return model, log


def vqa_from_meta(meta: dict) -> VqaConfig:
    h = meta["hyperparameters"]
    return VqaConfig(
        channels=h["channels"], side=h["side"], vocab=h["vocab"],
        classes=h["classes"], embed_dim=h["embed_dim"],
        question_hidden=h["question_hidden"], joint_dim=h["joint_dim"],
        rank=h["rank"], glimpses=h["glimpses"], sup_hidden=h["sup_hidden"],
        supervised=(meta["mode"] == "supervised"), lam=h["lam"],
        loss_all_candidates=h["loss_all_candidates"], dropout=h["dropout"],
    )


def load_vqa(path) -> tuple[VqaModel, dict]:
    """Rebuild an answering model from a checkpoint file."""
    from .diffcore import load_checkpoint

    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "vqa":
        raise ContractError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected 'vqa'")
    rng = np.random.default_rng(0)
    model = VqaModel(vqa_from_meta(meta), rng, branch_rng=rng)
    model.store.load_arrays(arrays)
    return model, meta


def vqa_meta(config: VqaConfig, train_cfg: TrainConfig, step_count: int) -> dict:
    return {
        "kind": "vqa",
        "format_version": 1,
        "mode": "supervised" if config.supervised else "unsupervised",
        "hyperparameters": {
            "channels": config.channels,
            "side": config.side,
            "vocab": config.vocab,
            "classes": config.classes,
            "embed_dim": config.embed_dim,
            "question_hidden": config.question_hidden,
            "joint_dim": config.joint_dim,
            "rank": config.rank,
            "glimpses": config.glimpses,
            "sup_hidden": config.sup_hidden,
            "lam": config.lam,
            "loss_all_candidates": config.loss_all_candidates,
            "dropout": config.dropout,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
        },
        "seed": train_cfg.seed,
        "step_count": step_count,
    }
