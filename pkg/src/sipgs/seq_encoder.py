"""Environmental sequence encoder: single-layer LSTM followed by an MLP head.

Each time step carries the six sensor readings plus two temporal
attributes (elapsed time since the first frame of the growth cycle and
the gap to the previous sample). Sensor fields are standardised with
training-split statistics; the temporal fields are only rescaled so that
their physical meaning survives normalisation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .params import ParamStore, init_linear
from .tensor import ContractError, Tensor

SENSOR_FIELDS = (
    "ambient_temperature",
    "ambient_humidity",
    "reservoir_level",
    "reservoir_temperature",
    "ph",
    "ec",
)
TIME_FIELDS = ("elapsed_time", "delta_t")
N_INPUTS = len(SENSOR_FIELDS) + len(TIME_FIELDS)
ELAPSED_SCALE = 1.0 / 86400.0
DELTA_SCALE = 1.0 / 3600.0


@dataclass(frozen=True)
class EnvSample:
    ambient_temperature: float
    ambient_humidity: float
    reservoir_level: float
    reservoir_temperature: float
    ph: float
    ec: float
    elapsed_time: float
    delta_t: float

    def as_row(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in SENSOR_FIELDS + TIME_FIELDS], dtype=np.float64)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sensor_rows: np.ndarray) -> "NormStats":
        rows = np.asarray(sensor_rows, dtype=np.float64).reshape(-1, len(SENSOR_FIELDS))
        if len(rows) == 0:
            raise ContractError("cannot compute normalisation statistics from zero rows")
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(len(SENSOR_FIELDS)), np.ones(len(SENSOR_FIELDS)))

    def to_dict(self) -> dict:
        return {"fields": list(SENSOR_FIELDS), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class EnvSequence:
    """Ordered condition samples, stored as an ``(n, 8)`` array in field order.

    ``normalized`` records whether :func:`normalize` has been applied;
    ``stats`` is the normalisation that was (or will be) used.
    """

    values: np.ndarray
    normalized: bool = False
    stats: NormStats | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != N_INPUTS:
            raise ContractError(f"EnvSequence expects shape (n, {N_INPUTS}), got {v.shape}")
        if len(v) == 0:
            raise ContractError("EnvSequence must contain at least one sample")
        if not np.isfinite(v).all():
            raise ContractError("EnvSequence contains non-finite values")
        if np.any(np.diff(v[:, 6]) < 0):
            raise ContractError("EnvSequence samples must be ordered by elapsed_time")
        if np.any(v[:, 7] < 0):
            raise ContractError("EnvSequence delta_t must be non-negative")
        self.values = v

    @classmethod
    def from_samples(cls, samples: Iterable[EnvSample]) -> "EnvSequence":
        rows = [s.as_row() for s in samples]
        if not rows:
            raise ContractError("EnvSequence must contain at least one sample")
        return cls(np.stack(rows))

    def __len__(self) -> int:
        return len(self.values)

    def prefix(self, t: int) -> "EnvSequence":
        if not 1 <= t <= len(self):
            raise ContractError(f"prefix length {t} outside 1..{len(self)}")
        return EnvSequence(self.values[:t], self.normalized, self.stats)

    @property
    def elapsed_time(self) -> np.ndarray:
        col = self.values[:, 6]
        return col / ELAPSED_SCALE if self.normalized else col


def normalize(seq: EnvSequence, stats: NormStats) -> EnvSequence:
    if len(seq) == 0:
        raise ContractError("cannot normalise an empty sequence")
    if seq.normalized:
        raise ContractError("sequence is already normalised")
    v = seq.values.copy()
    v[:, :6] = (v[:, :6] - stats.mean) / stats.std
    v[:, 6] *= ELAPSED_SCALE
    v[:, 7] *= DELTA_SCALE
    return EnvSequence(v, normalized=True, stats=stats)


def denormalize(seq: EnvSequence) -> EnvSequence:
    if not seq.normalized or seq.stats is None:
        raise ContractError("sequence is not normalised")
    v = seq.values.copy()
    v[:, :6] = v[:, :6] * seq.stats.std + seq.stats.mean
    v[:, 6] /= ELAPSED_SCALE
    v[:, 7] /= DELTA_SCALE
    return EnvSequence(v, normalized=False, stats=seq.stats)


@dataclass
class SequenceState:
    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise ContractError("hidden and cell state must have equal length")

    @classmethod
    def zeros(cls, size: int) -> "SequenceState":
        return cls(np.zeros(size), np.zeros(size))


# ------------------------------------------------------------------- params


def init_sequence_encoder(store: ParamStore, rng: np.random.Generator, hidden: int = 64,
                          mlp_hidden: int = 64, x_dim: int = 32) -> None:
    """Register ``seq.*`` parameters. Gate order in the fused matrix is i, f, g, o."""
    n_in = N_INPUTS + hidden
    bound = np.sqrt(6.0 / (n_in + 4 * hidden))
    store.add("seq.lstm.w", rng.uniform(-bound, bound, size=(n_in, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    store.add("seq.lstm.b", b)
    init_linear(store, rng, "seq.mlp1", hidden, mlp_hidden)
    init_linear(store, rng, "seq.mlp2", mlp_hidden, x_dim)


def hidden_size(store: ParamStore) -> int:
    return store["seq.lstm.b"].shape[0] // 4


# ------------------------------------------------------------- graph builders


def lstm_cell(store: ParamStore, inp: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch: ``inp`` [B, 8], ``h``/``c`` [B, H]."""
    H = hidden_size(store)
    if inp.shape[-1] != N_INPUTS or h.shape[-1] != H or c.shape != h.shape:
        raise ContractError(
            f"lstm_cell: expected input width {N_INPUTS} and state width {H}, "
            f"got {inp.shape}, {h.shape}, {c.shape}"
        )
    gates = T.concat([inp, h], axis=1) @ store["seq.lstm.w"] + store["seq.lstm.b"]
    i = T.sigmoid(gates[:, 0:H])
    f = T.sigmoid(gates[:, H : 2 * H])
    g = T.tanh(gates[:, 2 * H : 3 * H])
    o = T.sigmoid(gates[:, 3 * H : 4 * H])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def embed_head(store: ParamStore, h: Tensor) -> Tensor:
    hid = T.relu(h @ store["seq.mlp1.w"] + store["seq.mlp1.b"])
    return hid @ store["seq.mlp2.w"] + store["seq.mlp2.b"]


def encode_prefixes(store: ParamStore, inputs: np.ndarray, t_index: np.ndarray, s_index: np.ndarray,
                    max_window: int | None = None) -> Tensor:
    """Embeddings for many prefixes at once.

    ``inputs`` is a zero-padded ``(T, S, 8)`` block of normalised sequences.
    Item ``k`` asks for the embedding of sequence ``s_index[k]`` truncated
    after step ``t_index[k]`` (0-based, inclusive). Because the LSTM is
    causal, one pass over the block yields every prefix state; padding
    after a sequence's end is never read.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    t_index = np.asarray(t_index, dtype=np.int64)
    s_index = np.asarray(s_index, dtype=np.int64)
    if inputs.ndim != 3 or inputs.shape[2] != N_INPUTS:
        raise ContractError(f"encode_prefixes expects (T, S, {N_INPUTS}) inputs, got {inputs.shape}")
    if max_window is not None:
        return _encode_windows(store, inputs, t_index, s_index, max_window)
    H = hidden_size(store)
    S = inputs.shape[1]
    h = T.Tensor(np.zeros((S, H)))
    c = T.Tensor(np.zeros((S, H)))
    states = []
    for t in range(int(t_index.max()) + 1):
        h, c = lstm_cell(store, T.Tensor(inputs[t]), h, c)
        states.append(h)
    hs = T.stack(states, axis=0)
    return embed_head(store, hs[t_index, s_index])


def _encode_windows(store, inputs, t_index, s_index, window):
    rows = []
    for t, s in zip(t_index, s_index):
        start = max(0, int(t) - window + 1)
        rows.append(inputs[start : t + 1, s])
    # group equal-length windows so each group runs as one batch
    out: list[Tensor | None] = [None] * len(rows)
    lengths = np.array([len(r) for r in rows])
    H = hidden_size(store)
    for n in np.unique(lengths):
        members = np.flatnonzero(lengths == n)
        block = np.stack([rows[k] for k in members], axis=1)
        h = T.Tensor(np.zeros((len(members), H)))
        c = T.Tensor(np.zeros((len(members), H)))
        for t in range(int(n)):
            h, c = lstm_cell(store, T.Tensor(block[t]), h, c)
        x = embed_head(store, h)
        for j, k in enumerate(members):
            out[k] = x[j : j + 1]
    return T.concat(out, axis=0)


# ------------------------------------------------------------ array interface


def lstm_step(sample: np.ndarray, state: SequenceState, store: ParamStore) -> SequenceState:
    """Advance ``state`` by one normalised sample (length-8 row). No graph is recorded."""
    H = hidden_size(store)
    sample = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    if state.hidden.shape != (H,):
        raise ContractError(f"lstm_step: state width {state.hidden.shape} does not match hidden size {H}")
    with T.no_grad():
        h, c = lstm_cell(store, T.Tensor(sample), T.Tensor(state.hidden[None]), T.Tensor(state.cell[None]))
    return SequenceState(h.data[0].copy(), c.data[0].copy())


def embed(state: SequenceState, store: ParamStore) -> np.ndarray:
    with T.no_grad():
        return embed_head(store, T.Tensor(state.hidden[None])).data[0].copy()


def run_sequence(seq: EnvSequence, store: ParamStore, state: SequenceState | None = None) -> SequenceState:
    if len(seq) == 0:
        raise ContractError("cannot encode an empty sequence")
    state = state or SequenceState.zeros(hidden_size(store))
    for row in seq.values:
        state = lstm_step(row, state, store)
    return state


def encode_sequence(seq: EnvSequence, store: ParamStore, state: SequenceState | None = None,
                    max_window: int | None = None) -> np.ndarray:
    """Embedding ``x`` of the whole (normalised) sequence.

    ``state`` resumes from a previously saved LSTM state, in which case
    only the new samples in ``seq`` are consumed.
    """
    if not seq.normalized:
        raise ContractError("encode_sequence expects a normalised sequence")
    values = seq.values if max_window is None or state is not None else seq.values[-max_window:]
    return embed(run_sequence(EnvSequence(values, True, seq.stats), store, state), store)


def stream_embeddings(seq: EnvSequence, store: ParamStore, max_window: int | None = None) -> np.ndarray:
    """Embeddings of every prefix ``seq[:1] .. seq[:n]`` as an ``(n, x_dim)`` array."""
    if not seq.normalized:
        raise ContractError("stream_embeddings expects a normalised sequence")
    if max_window is not None:
        return np.stack([encode_sequence(seq.prefix(t), store, max_window=max_window)
                         for t in range(1, len(seq) + 1)])
    state = SequenceState.zeros(hidden_size(store))
    out = []
    for row in seq.values:
        state = lstm_step(row, state, store)
        out.append(embed(state, store))
    return np.stack(out)


def sequences_to_block(seqs: Sequence[np.ndarray]) -> np.ndarray:
    """Zero-pad a list of ``(n_i, 8)`` arrays into a ``(max n, S, 8)`` block."""
    n = max(len(s) for s in seqs)
    block = np.zeros((n, len(seqs), N_INPUTS))
    for j, s in enumerate(seqs):
        block[: len(s), j] = s
    return block


__all__ = [
    "SENSOR_FIELDS",
    "N_INPUTS",
    "EnvSample",
    "EnvSequence",
    "NormStats",
    "SequenceState",
    "normalize",
    "denormalize",
    "init_sequence_encoder",
    "lstm_cell",
    "embed_head",
    "encode_prefixes",
    "lstm_step",
    "embed",
    "run_sequence",
    "encode_sequence",
    "stream_embeddings",
    "sequences_to_block",
]

