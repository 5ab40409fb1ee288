"""Named parameter storage, initialisation, Adam, and the checkpoint container.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"SIPGSCK1"
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header (sorted keys)
    ...       raw '<f8' blobs, concatenated in header order

The header lists, per parameter, ``name``, ``shape``, and the byte
``offset`` of its data plus optional ``m``/``v`` moment offsets and the
per-parameter Adam ``step``. It also carries ``step`` (global update
count), ``config_hash`` and a free-form ``extra`` mapping. Offsets are
relative to the first byte after the header.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .tensor import ContractError, Tensor

MAGIC = b"SIPGSCK1"


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParamStore:
    """Ordered mapping of parameter name to trainable tensor plus Adam state."""

    params: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)
    state: dict[str, _Moments] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str | tuple[str, ...] = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def set(self, name: str, value: np.ndarray) -> None:
        cur = self.params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != cur.shape:
            raise ContractError(f"parameter {name!r} has shape {cur.shape}, got {value.shape}")
        cur.data = value.copy()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.set(n, arr)

    def copy(self) -> "ParamStore":
        other = ParamStore(step=self.step)
        for n, t in self.params.items():
            other.add(n, t.data)
        for n, s in self.state.items():
            other.state[n] = _Moments(s.m.copy(), s.v.copy(), s.step)
        return other

    def digest(self) -> str:
        h = hashlib.sha256()
        for n, t in self.params.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParamStore, rng: np.random.Generator, name: str, n_in: int, n_out: int) -> None:
    store.add(f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
    store.add(f"{name}.b", np.zeros(n_out))


def init_conv(store: ParamStore, rng: np.random.Generator, name: str, c_in: int, c_out: int, k: int,
              transpose: bool = False) -> None:
    # transposed kernels are stored [C_in, C_out, k, k]; the Glorot bound is symmetric in the two
    shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
    store.add(f"{name}.w", glorot_uniform(rng, shape, c_in * k * k, c_out * k * k))
    store.add(f"{name}.b", np.zeros(c_out))


def adam_step(store: ParamStore, names: Iterable[str] | None = None, lr: float = 2e-4,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update for ``names`` (all parameters by default)."""
    names = list(store.params) if names is None else list(names)
    for n in names:
        if store.params[n].grad is None:
            raise ContractError(f"adam_step: no gradient for parameter {n!r}")
    for n in names:
        p = store.params[n]
        g = p.grad
        st = store.state.get(n)
        if st is None:
            st = store.state[n] = _Moments(np.zeros_like(p.data), np.zeros_like(p.data))
        st.step += 1
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * (g * g)
        m_hat = st.m / (1.0 - beta1**st.step)
        v_hat = st.v / (1.0 - beta2**st.step)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step += 1


# ---------------------------------------------------------------- checkpoints


def _blob(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def checkpoint_bytes(store: ParamStore, config_hash: str = "", extra: dict | None = None) -> bytes:
    body = io.BytesIO()
    entries = []
    for n, t in store.params.items():
        e = {"name": n, "shape": list(t.shape), "offset": body.tell()}
        body.write(_blob(t.data))
        st = store.state.get(n)
        if st is not None:
            e["m"] = body.tell()
            body.write(_blob(st.m))
            e["v"] = body.tell()
            body.write(_blob(st.v))
            e["step"] = st.step
        entries.append(e)
    header = {
        "format": "sipgs-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "params": entries,
        "step": store.step,
        "config_hash": config_hash,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + body.getvalue()


def save_checkpoint(path: str | Path, store: ParamStore, config_hash: str = "", extra: dict | None = None) -> str:
    """Write a checkpoint; returns the sha256 of the file bytes."""
    raw = checkpoint_bytes(store, config_hash, extra)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def read_checkpoint(raw: bytes) -> tuple[ParamStore, dict]:
    if raw[:8] != MAGIC:
        raise ContractError("not a sipgs checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    body = memoryview(raw)[16 + hlen :]

    def arr(offset: int, shape: list[int]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(body[offset : offset + 8 * n], dtype="<f8").reshape(shape).astype(np.float64)

    store = ParamStore(step=int(header["step"]))
    for e in header["params"]:
        store.add(e["name"], arr(e["offset"], e["shape"]))
        if "m" in e:
            store.state[e["name"]] = _Moments(arr(e["m"], e["shape"]), arr(e["v"], e["shape"]), int(e["step"]))
    return store, header


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return read_checkpoint(p.read_bytes())
