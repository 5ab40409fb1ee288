"""Recognition encoder, conditional decoder, discriminator and rollouts.

Frames are exchanged as channel-last ``(H, W, 3)`` arrays in [0, 1]; the
networks work on NCHW batches internally. Every down/up-sampling stage is
a stride-2 convolution with an even kernel ``k`` and padding ``k/2 - 1``,
so each stage halves or doubles the spatial size exactly.

Parameter prefixes: ``seq.`` sequence encoder, ``rec.`` recognition
model, ``gen.`` decoder (``gen.prev.`` is the recurrent branch), ``disc.``
discriminator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .params import ParamStore, init_conv, init_linear
from .seq_encoder import EnvSequence, init_sequence_encoder, stream_embeddings
from .tensor import ContractError, Tensor

LOGVAR_CLAMP = 10.0
LEAK = 0.2


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor


@dataclass
class LatentSample:
    z: Tensor
    epsilon: np.ndarray


@dataclass
class Rollout:
    frames: list[np.ndarray]
    z: np.ndarray  # (n, d_z) latent used for every frame
    mode: str
    seed: int | None = None
    elapsed_time: list[float] = field(default_factory=list)


def _pad(cfg: ModelConfig) -> int:
    return cfg.kernel // 2 - 1


def frames_to_nchw(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def nchw_to_frames(arr: np.ndarray) -> list[np.ndarray]:
    return [np.ascontiguousarray(a.transpose(1, 2, 0)) for a in np.asarray(arr)]


# ------------------------------------------------------------------- params


def init_model(cfg: ModelConfig, rng: np.random.Generator, recognition: bool = True) -> ParamStore:
    """Fresh parameters in a fixed registration order: seq, rec, gen, disc."""
    store = ParamStore()
    ch = cfg.channels
    k = cfg.kernel
    s = cfg.seed_size
    init_sequence_encoder(store, rng, cfg.lstm_hidden, cfg.mlp_hidden, cfg.x_dim)

    if recognition:
        c_prev = 3
        for i, c in enumerate(ch):
            init_conv(store, rng, f"rec.conv{i}", c_prev, c, k)
            c_prev = c
        feat = ch[-1] * s * s + cfg.x_dim
        init_linear(store, rng, "rec.mu", feat, cfg.d_z)
        init_linear(store, rng, "rec.logvar", feat, cfg.d_z)

    init_linear(store, rng, "gen.proj", cfg.d_z + cfg.x_dim, ch[-1] * s * s)
    n = len(ch)
    for i in range(n):
        c_in = ch[n - 1 - i]
        c_out = ch[n - 2 - i] if i < n - 1 else 3
        if cfg.variant == "recurrent" and i == n - 2:
            c_in *= 2
        init_conv(store, rng, f"gen.deconv{i}", c_in, c_out, k, transpose=True)
    if cfg.variant == "recurrent":
        init_conv(store, rng, "gen.prev0", 3, ch[0], k)
        init_conv(store, rng, "gen.prev1", ch[0], ch[1], k)

    c_prev = 3
    for i, c in enumerate(ch):
        extra = cfg.x_dim if (cfg.disc_conditioning and i == 3) else 0
        init_conv(store, rng, f"disc.conv{i}", c_prev + extra, c, k)
        c_prev = c
    init_linear(store, rng, "disc.head", ch[-1] * s * s, 1)
    return store


def has_recognition(store: ParamStore) -> bool:
    return "rec.mu.w" in store


# ------------------------------------------------------------------ helpers


def _down(store, name, x, cfg, act):
    y = T.conv2d(x, store[f"{name}.w"], stride=2, pad=_pad(cfg))
    return act(y + store[f"{name}.b"].reshape(1, -1, 1, 1))


def _up(store, name, x, cfg):
    y = T.conv2d_transpose(x, store[f"{name}.w"], stride=2, pad=_pad(cfg))
    return y + store[f"{name}.b"].reshape(1, -1, 1, 1)


def _linear(store, name, x):
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def _check_frames(y: Tensor, cfg: ModelConfig, what: str) -> None:
    want = (3, cfg.image_size, cfg.image_size)
    if y.ndim != 4 or tuple(y.shape[1:]) != want:
        raise ContractError(f"{what}: expected frames of shape (B, {want[0]}, {want[1]}, {want[2]}), got {y.shape}")


def _check_vec(v: Tensor, n: int, batch: int, what: str) -> None:
    if v.ndim != 2 or v.shape[1] != n or v.shape[0] != batch:
        raise ContractError(f"{what}: expected shape ({batch}, {n}), got {v.shape}")


# --------------------------------------------------------------- networks


def recognize(store: ParamStore, cfg: ModelConfig, x: Tensor, y: Tensor) -> GaussianParams:
    """Approximate posterior q(z | x, y) as a diagonal Gaussian."""
    x, y = T._as_tensor(x), T._as_tensor(y)
    _check_frames(y, cfg, "recognize")
    _check_vec(x, cfg.x_dim, y.shape[0], "recognize: embedding")
    if not has_recognition(store):
        raise ContractError("recognize: parameter store has no recognition model (cgan baseline?)")
    h = y
    for i in range(len(cfg.channels)):
        h = _down(store, f"rec.conv{i}", h, cfg, T.relu)
    feat = T.concat([h.reshape(h.shape[0], -1), x], axis=1)
    mu = _linear(store, "rec.mu", feat)
    log_var = T.clip(_linear(store, "rec.logvar", feat), -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return GaussianParams(mu, log_var)


def reparameterize(p: GaussianParams, epsilon: np.ndarray) -> LatentSample:
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != p.mu.shape:
        raise ContractError(f"reparameterize: epsilon shape {epsilon.shape} != mu shape {p.mu.shape}")
    z = p.mu + T.exp(0.5 * p.log_var) * epsilon
    return LatentSample(z, epsilon)


def _decode(store: ParamStore, cfg: ModelConfig, z: Tensor, x: Tensor, prev: Tensor | None) -> Tensor:
    z, x = T._as_tensor(z), T._as_tensor(x)
    B = z.shape[0]
    _check_vec(z, cfg.d_z, B, "generate: z")
    _check_vec(x, cfg.x_dim, B, "generate: x")
    ch, s = cfg.channels, cfg.seed_size
    h = T.relu(_linear(store, "gen.proj", T.concat([z, x], axis=1))).reshape(B, ch[-1], s, s)
    n = len(ch)
    for i in range(n):
        if prev is not None and i == n - 2:
            p = _down(store, "gen.prev0", prev, cfg, T.relu)
            p = _down(store, "gen.prev1", p, cfg, T.relu)
            h = T.concat([h, p], axis=1)
        h = _up(store, f"gen.deconv{i}", h, cfg)
        h = T.relu(h) if i < n - 1 else T.sigmoid(h)
    return h


def generate(store: ParamStore, cfg: ModelConfig, z, x) -> Tensor:
    """Decode ``[z | x]`` into a batch of frames (NCHW, values in [0, 1])."""
    if cfg.variant != "standard":
        raise ContractError("generate: model is the recurrent variant; use generate_recurrent")
    return _decode(store, cfg, z, x, None)


def generate_recurrent(store: ParamStore, cfg: ModelConfig, z, x, prev) -> Tensor:
    """Decode conditioned additionally on the previous frame ``prev`` (NCHW)."""
    if cfg.variant != "recurrent":
        raise ContractError("generate_recurrent: model is the standard variant; use generate")
    prev = T._as_tensor(prev)
    _check_frames(prev, cfg, "generate_recurrent: prev")
    return _decode(store, cfg, z, x, prev)


def decode(store: ParamStore, cfg: ModelConfig, z, x, prev=None) -> Tensor:
    """Dispatch to the decoder matching ``cfg.variant``."""
    if cfg.variant == "recurrent":
        if prev is None:
            prev = np.zeros((T._as_tensor(z).shape[0], 3, cfg.image_size, cfg.image_size))
        return generate_recurrent(store, cfg, z, x, prev)
    return generate(store, cfg, z, x)


def discriminate(store: ParamStore, cfg: ModelConfig, y, x=None) -> Tensor:
    """Realness score in (0, 1) per frame, shape (B, 1)."""
    y = T._as_tensor(y)
    _check_frames(y, cfg, "discriminate")
    h = y
    for i in range(len(cfg.channels)):
        if cfg.disc_conditioning and i == 3:
            if x is None:
                raise ContractError("discriminate: conditioning is on but no embedding was given")
            x = T._as_tensor(x)
            _check_vec(x, cfg.x_dim, y.shape[0], "discriminate: x")
            B, _, r, _ = h.shape
            xb = T.broadcast_to(x.reshape(B, cfg.x_dim, 1, 1), (B, cfg.x_dim, r, r))
            h = T.concat([h, xb], axis=1)
        h = _down(store, f"disc.conv{i}", h, cfg, lambda t: T.leaky_relu(t, LEAK))
    logit = _linear(store, "disc.head", h.reshape(h.shape[0], -1))
    return T.sigmoid(logit)


# ----------------------------------------------------------------- rollouts


def simulate_rollout(seq: EnvSequence, store: ParamStore, cfg: ModelConfig, mode: str = "stochastic",
                     z_fixed: np.ndarray | None = None, seed: int = 0, chunk: int = 64) -> Rollout:
    """Generate one frame per prefix of ``seq`` (which must be normalised).

    ``stochastic`` draws a fresh latent per frame, as one ``(n, d_z)``
    block from ``default_rng(seed)``; ``controlled`` reuses a single latent
    for every frame, either ``z_fixed`` or one ``d_z`` draw from the same
    generator. The recurrent variant feeds back its own previous output,
    starting from an all-zero frame.
    """
    if mode not in ("stochastic", "controlled"):
        raise ContractError(f"unknown rollout mode {mode!r}")
    if not seq.normalized:
        raise ContractError("simulate_rollout expects a normalised sequence")
    n = len(seq)
    rng = np.random.default_rng(seed)
    if mode == "controlled":
        if z_fixed is not None:
            z_one = np.asarray(z_fixed, dtype=np.float64).reshape(-1)
            if z_one.shape != (cfg.d_z,):
                raise ContractError(f"z_fixed must have length {cfg.d_z}, got {z_one.shape[0]}")
        else:
            z_one = rng.standard_normal(cfg.d_z)
        zs = np.broadcast_to(z_one, (n, cfg.d_z)).copy()
    else:
        zs = rng.standard_normal((n, cfg.d_z))

    xs = stream_embeddings(seq, store, cfg.max_window)
    frames: list[np.ndarray] = []
    with T.no_grad():
        if cfg.variant == "recurrent":
            prev = np.zeros((1, 3, cfg.image_size, cfg.image_size))
            for t in range(n):
                out = generate_recurrent(store, cfg, zs[t : t + 1], xs[t : t + 1], prev).data
                frames.extend(nchw_to_frames(out))
                prev = out
        else:
            for a in range(0, n, chunk):
                out = generate(store, cfg, zs[a : a + chunk], xs[a : a + chunk]).data
                frames.extend(nchw_to_frames(out))
    return Rollout(frames, zs, mode, seed, seq.elapsed_time.tolist())


__all__ = [
    "GaussianParams",
    "LatentSample",
    "Rollout",
    "init_model",
    "has_recognition",
    "recognize",
    "reparameterize",
    "generate",
    "generate_recurrent",
    "decode",
    "discriminate",
    "simulate_rollout",
    "frames_to_nchw",
    "nchw_to_frames",
]
