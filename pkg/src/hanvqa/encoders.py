"""Input encoders: token sequences to question vectors, files or a
planted-signal generator to feature grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import ParameterStore, Tensor, ops
from .errors import ContractError
from .fileio import FeatureGrid, read_feature_grid

UNK_TOKEN = "<unk>"


class GruCell:
    """Gated recurrent cell with combined input+state weight matrices.

    Holds three (input+hidden, hidden) matrices and three biases in the
    given store under ``prefix``.  The update is the usual one: sigmoid
    update and reset gates, tanh candidate on the reset-scaled state,
    convex blend h' = (1 - z) * h + z * c.
    """

    def __init__(self, store: ParameterStore, prefix: str, input_size: int,
                 hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        shape = (input_size + hidden_size, hidden_size)
        self.w_update = store.create_glorot(f"{prefix}.w_update", rng, shape)
        self.w_reset = store.create_glorot(f"{prefix}.w_reset", rng, shape)
        self.w_cand = store.create_glorot(f"{prefix}.w_cand", rng, shape)
        self.b_update = store.create_zeros(f"{prefix}.b_update", (hidden_size,))
        self.b_reset = store.create_zeros(f"{prefix}.b_reset", (hidden_size,))
        self.b_cand = store.create_zeros(f"{prefix}.b_cand", (hidden_size,))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        """One recurrent update on a batch: x (B, i), h (B, h) -> (B, h)."""
        if x.shape[1] != self.input_size or h.shape[1] != self.hidden_size:
            raise ContractError(
                f"gru step: x {x.shape}, h {h.shape} vs cell ({self.input_size}, {self.hidden_size})"
            )
        xh = ops.concat_cols([x, h])
        z = ops.sigmoid(ops.add(ops.matmul(xh, self.w_update), self.b_update))
        r = ops.sigmoid(ops.add(ops.matmul(xh, self.w_reset), self.b_reset))
        gated = ops.concat_cols([x, ops.mul(r, h)])
        c = ops.tanh(ops.add(ops.matmul(gated, self.w_cand), self.b_cand))
        # h + z * (c - h) == (1 - z) * h + z * c
        return ops.add(h, ops.mul(z, ops.sub(c, h)))


def embed(tokens, table: Tensor) -> Tensor:
    """Look up token ids in an embedding table: returns (T, e) rows."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError(f"embed expects a non-empty 1D id sequence, got shape {ids.shape}")
    return ops.gather_rows(table, ids)


def recurrent_encode(cell: GruCell, inputs, h0: Tensor | None = None) -> list[Tensor]:
    """Feed a sequence through the cell from h0 (zeros by default);
    returns all hidden states, each shaped (hidden,)."""
    if isinstance(inputs, Tensor):
        steps = [ops.gather_rows(inputs, np.array([t])) for t in range(inputs.shape[0])]
    else:
        steps = [ops.reshape(x, (1, -1)) for x in inputs]
    if not steps:
        raise ContractError("recurrent_encode: empty input sequence")
    h = ops.reshape(h0, (1, -1)) if h0 is not None else Tensor(np.zeros((1, cell.hidden_size)))
    states = []
    for x in steps:
        h = cell.step(x, h)
        states.append(ops.reshape(h, (cell.hidden_size,)))
    return states


class QuestionEncoder:
    """Word embedding plus a recurrent pass; the last hidden state is the
    question vector."""

    def __init__(self, store: ParameterStore, vocab_size: int, embed_size: int,
                 hidden_size: int, rng: np.random.Generator, max_len: int = 32):
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.max_len = max_len
        self.table = store.create_glorot("question.embed", rng, (vocab_size, embed_size))
        self.cell = GruCell(store, "question.gru", embed_size, hidden_size, rng)

    def _check(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.size == 0:
            raise ContractError("question must have at least one token")
        if ids.size > self.max_len:
            raise ContractError(f"question length {ids.size} exceeds max {self.max_len}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(
                f"token id out of vocabulary (size {self.vocab_size}): {ids.tolist()}"
            )
        return ids

    def encode(self, tokens) -> Tensor:
        """Single question -> (hidden,) vector."""
        ids = self._check(tokens)
        states = recurrent_encode(self.cell, embed(ids, self.table))
        return states[-1]

    def encode_batch(self, token_rows) -> Tensor:
        """Encode B variable-length questions -> (B, hidden).

        Questions are bucketed by length so each bucket runs as one
        batched recurrence, then rows are put back in input order.
        """
        if not token_rows:
            raise ContractError("encode_batch: empty question batch")
        buckets: dict[int, list[int]] = {}
        checked = [self._check(t) for t in token_rows]
        for i, ids in enumerate(checked):
            buckets.setdefault(ids.size, []).append(i)
        pieces = []
        order = []
        for length in sorted(buckets):
            members = buckets[length]
            ids = np.stack([checked[i] for i in members])  # (Bl, length)
            h = Tensor(np.zeros((len(members), self.hidden_size)))
            for t in range(length):
                x = ops.gather_rows(self.table, ids[:, t])
                h = self.cell.step(x, h)
            pieces.append(h)
            order.extend(members)
        stacked = pieces[0] if len(pieces) == 1 else ops.stack_rows(pieces)
        inverse = np.empty(len(order), dtype=np.int64)
        inverse[np.asarray(order)] = np.arange(len(order))
        if np.array_equal(inverse, np.arange(len(order))):
            return stacked
        return ops.gather_rows(stacked, inverse)


def encode_question(encoder: QuestionEncoder, tokens) -> Tensor:
    return encoder.encode(tokens)


def load_features(path) -> FeatureGrid:
    return read_feature_grid(path)


@dataclass
class SyntheticGridSpec:
    """Geometry and difficulty of the planted-signal feature generator.

    One grid cell (the signal cell) carries a two-channel beacon plus a
    one-hot value code per attribute block; decoy cells carry half a
    beacon and a wrong value code; every non-signal cell gets additive
    Gaussian noise.
    """

    channels: int = 32
    side: int = 4
    classes: int = 8
    attributes: int = 2
    decoys: int = 3
    beacon_amp: float = 1.0
    value_amp: float = 0.5    # weak on purpose: reading a value needs sharp attention
    noise_sigma: float = 0.3
    beacon_channels: int = 2
    map_spread: float = 0.4   # ground-truth mass decay per grid ring; 0 = one-hot
    map_amp: float = 6.0      # raw peak height; sets contrast after softmax normalization

    def __post_init__(self):
        needed = self.beacon_channels + self.attributes * self.classes
        if self.channels < needed:
            raise ContractError(
                f"channels={self.channels} too small: beacon + attribute blocks need {needed}"
            )
        if self.decoys >= self.side * self.side:
            raise ContractError("decoys must leave room for the signal cell")

    @property
    def cells(self) -> int:
        return self.side * self.side

    def value_channel(self, attribute: int, value: int) -> int:
        return self.beacon_channels + attribute * self.classes + value

    def prototype(self, values) -> np.ndarray:
        """Clean channel pattern of a signal cell holding ``values``."""
        col = np.zeros(self.channels)
        col[: self.beacon_channels] = self.beacon_amp
        for a, v in enumerate(values):
            col[self.value_channel(a, v)] = self.value_amp
        return col

    def reference_map(self, signal_cell: int) -> np.ndarray:
        """Raw ground-truth attention: map_amp at the signal cell, decaying
        by ``map_spread`` per Chebyshev ring around it (one-hot-shaped for
        spread 0).  The amplitude sets how peaked the map is once the
        pipeline softmax-normalizes it."""
        l = self.side
        row0, col0 = divmod(signal_cell, l)
        out = np.zeros(self.cells)
        for cell in range(self.cells):
            row, col = divmod(cell, l)
            ring = max(abs(row - row0), abs(col - col0))
            out[cell] = self.map_amp * (self.map_spread ** ring if ring else 1.0)
        return out


@dataclass
class PlantedSample:
    """Ground truth produced alongside one synthetic grid."""

    signal_cell: int
    values: list[int] = field(default_factory=list)
    decoy_cells: list[int] = field(default_factory=list)


def synth_features(spec: SyntheticGridSpec, seed: int) -> tuple[FeatureGrid, PlantedSample]:
    """Generate one grid with a planted signal cell; deterministic in seed."""
    rng = np.random.default_rng(seed)
    values = [int(v) for v in rng.integers(0, spec.classes, size=spec.attributes)]
    cell_order = rng.permutation(spec.cells)
    signal = int(cell_order[0])
    decoys = [int(c) for c in cell_order[1 : 1 + spec.decoys]]

    grid = np.zeros((spec.channels, spec.cells))
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, size=(spec.channels, spec.cells))
        noise[:, signal] = 0.0  # the signal cell stays clean
        grid += noise
    grid[:, signal] = spec.prototype(values)
    for k, cell in enumerate(decoys):
        # half a beacon plus a misleading value code
        grid[k % spec.beacon_channels, cell] += spec.beacon_amp
        for a in range(spec.attributes):
            wrong = (values[a] + 1 + int(rng.integers(0, spec.classes - 1))) % spec.classes
            grid[spec.value_channel(a, wrong), cell] += spec.value_amp
    info = PlantedSample(signal_cell=signal, values=values, decoy_cells=decoys)
    return FeatureGrid(grid, spec.side), info
