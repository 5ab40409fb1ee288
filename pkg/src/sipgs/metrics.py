"""Frame metrics: MSE, SSIM, time-weighted coherence and a Frechet feature distance.

Frames are channel-last ``(H, W, C)`` (or single-channel ``(H, W)``)
arrays in [0, 1]. Time stamps are elapsed seconds; the coherence decay
``lambda`` is per second.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .config import MetricConfig, train_config_from_dict
from .dataset import Dataset
from .genmodel import frames_to_nchw, simulate_rollout
from .params import ParamStore, glorot_uniform, load_checkpoint
from .tensor import ContractError

DEFAULT_DECAY = 1.9e-4
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
EIG_CLAMP = 1e-8
REPORT_COLUMNS = ("model", "beta", "fid_like", "mse", "mse_tw", "ssim_tw", "cs_mse_tw", "cs_ssim_tw")


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b, "mse")
    return float(np.mean(np.square(a - b)))


# ---------------------------------------------------------------------- SSIM


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable "valid" correlation over the two leading axes
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ContractError(f"ssim: image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter(a, g), _filter(b, g)
    var_a = _filter(a * a, g) - mu_a * mu_a
    var_b = _filter(b * b, g) - mu_b * mu_b
    cov = _filter(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_map(a, b, data_range)))


# -------------------------------------------------------- time-weighted metrics


@dataclass
class TimeWeights:
    decay: float
    raw: np.ndarray
    normalized: np.ndarray


def raw_weight(dt: float, decay: float = DEFAULT_DECAY) -> float:
    """Un-normalised weight ``exp(-decay * dt)`` of one frame pair ``dt`` seconds apart."""
    return float(np.exp(-decay * dt))


def time_weights(timestamps: Sequence[float], decay: float = DEFAULT_DECAY) -> TimeWeights:
    """``exp(-decay * dt)`` for each consecutive pair, plus the version summing to one."""
    t = np.asarray(timestamps, dtype=np.float64).reshape(-1)
    if len(t) < 2:
        raise ContractError("time_weights needs at least two timestamps")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ContractError("time_weights: timestamps must be strictly increasing")
    raw = np.exp(-decay * dt)
    # shifting by the smallest gap keeps the ratio finite when every raw weight underflows
    rel = np.exp(-decay * (dt - dt.min()))
    return TimeWeights(decay, raw, rel / rel.sum())


def coherence(frames: Sequence[np.ndarray], timestamps: Sequence[float], decay: float = DEFAULT_DECAY,
              kind: str = "mse", scale_255: bool = False) -> float:
    """Time-weighted mean of ``kind`` between consecutive frames."""
    if len(frames) < 2:
        raise ContractError("coherence needs at least two frames")
    if len(frames) != len(timestamps):
        raise ContractError(f"coherence: {len(frames)} frames but {len(timestamps)} timestamps")
    if kind not in ("mse", "ssim"):
        raise ContractError(f"unknown coherence kind {kind!r}")
    w = time_weights(timestamps, decay)
    fn = mse if kind == "mse" else ssim
    vals = np.array([fn(frames[i], frames[i + 1]) for i in range(len(frames) - 1)])
    # dividing once at the end keeps constant inputs exact (all-ones stays 1.0)
    rel = w.normalized
    out = float(np.sum(rel * vals) / np.sum(rel))
    if kind == "mse" and scale_255:
        out *= 255.0**2
    return out


# ----------------------------------------------------------- Frechet distance


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = _clamp_eigs(vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clamp_eigs(vals: np.ndarray) -> np.ndarray:
    if np.any(vals < -EIG_CLAMP * max(1.0, float(np.abs(vals).max(initial=0.0)))):
        raise ContractError(f"covariance product has a significantly negative eigenvalue ({vals.min():.3e})")
    return np.clip(vals, 0.0, None)


def frechet_from_stats(mu_r, cov_r, mu_g, cov_g) -> float:
    """Squared Frechet (W2) distance between two Gaussians.

    ``Tr((cov_r cov_g)^1/2)`` is evaluated as the trace of the square root
    of the symmetric matrix ``cov_r^1/2 cov_g cov_r^1/2``, which has the
    same eigenvalues.
    """
    mu_r, mu_g = np.atleast_1d(mu_r), np.atleast_1d(mu_g)
    cov_r, cov_g = np.atleast_2d(cov_r), np.atleast_2d(cov_g)
    s = _sqrtm_psd(cov_r)
    mid = s @ cov_g @ s
    eig = _clamp_eigs(np.linalg.eigvalsh((mid + mid.T) / 2.0))
    tr_cross = float(np.sum(np.sqrt(eig)))
    d2 = float(np.sum((mu_r - mu_g) ** 2) + np.trace(cov_r) + np.trace(cov_g) - 2.0 * tr_cross)
    return max(d2, 0.0)


def frechet_from_features(real: np.ndarray, gen: np.ndarray) -> float:
    real, gen = np.asarray(real, dtype=np.float64), np.asarray(gen, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:
        raise ContractError(f"frechet: feature arrays must be (n, d) with equal d, got {real.shape}, {gen.shape}")
    d = real.shape[1]
    for name, f in (("real", real), ("generated", gen)):
        if len(f) < d + 1:
            raise ContractError(f"frechet: {name} set has {len(f)} samples, need at least {d + 1}")
    return frechet_from_stats(real.mean(0), np.cov(real, rowvar=False), gen.mean(0), np.cov(gen, rowvar=False))


class FeatureExtractor:
    """Fixed, never-trained frame embedding.

    ``random_conv``: three stride-2 4x4 convolutions (3->16->32->64) with
    Glorot weights from ``seed``, ReLU, then global average pooling.
    ``pixel_stats``: per-channel means of a 4x4 grid of blocks (48 values).
    """

    def __init__(self, kind: str = "random_conv", seed: int = 0):
        if kind not in ("random_conv", "pixel_stats"):
            raise ContractError(f"unknown feature extractor {kind!r}")
        self.kind, self.seed = kind, seed
        self.weights: list[np.ndarray] = []
        if kind == "random_conv":
            rng = np.random.default_rng(seed)
            c_prev = 3
            for c in (16, 32, 64):
                self.weights.append(glorot_uniform(rng, (c, c_prev, 4, 4), c_prev * 16, c * 16))
                c_prev = c

    @property
    def dim(self) -> int:
        return 64 if self.kind == "random_conv" else 48

    def __call__(self, frames: Sequence[np.ndarray], chunk: int = 128) -> np.ndarray:
        x = frames_to_nchw(frames)
        if self.kind == "pixel_stats":
            B, C, H, W = x.shape
            g = 4
            return x[:, :, : H - H % g, : W - W % g].reshape(B, C, g, H // g, g, W // g).mean(axis=(3, 5)).reshape(B, -1)
        out = []
        with T.no_grad():
            for a in range(0, len(x), chunk):
                h = T.Tensor(x[a : a + chunk] - 0.5)
                for w in self.weights:
                    h = T.relu(T.conv2d(h, w, stride=2, pad=1))
                out.append(h.data.mean(axis=(2, 3)))
        return np.concatenate(out)


def frechet_distance(real: Sequence[np.ndarray], generated: Sequence[np.ndarray],
                     fx: FeatureExtractor | None = None) -> float:
    fx = fx or FeatureExtractor()
    for name, s in (("real", real), ("generated", generated)):
        if len(s) < fx.dim + 1:
            raise ContractError(f"frechet: {name} set has {len(s)} frames, need at least {fx.dim + 1}")
    return frechet_from_features(fx(real), fx(generated))


# ---------------------------------------------------------------- evaluation


@dataclass
class CycleFrames:
    """Real and generated frames of one growth cycle, aligned by image."""

    timestamps: np.ndarray
    real: list[np.ndarray]
    stochastic: list[np.ndarray]
    controlled: list[np.ndarray]


def evaluate_frames(cycles: Sequence[CycleFrames], mcfg: MetricConfig, fx: FeatureExtractor | None = None) -> dict:
    """Report metrics from already generated frames (no model needed)."""
    fx = fx or FeatureExtractor(mcfg.extractor, mcfg.extractor_seed)
    real = [f for c in cycles for f in c.real]
    gen = [f for c in cycles for f in c.stochastic]
    scale = 255.0**2 if mcfg.scale_255 else 1.0
    row = {
        "fid_like": frechet_distance(real, gen, fx),
        "mse": float(np.mean([mse(a, b) for a, b in zip(gen, real)])) * scale,
    }
    for prefix, key in (("", "stochastic"), ("cs_", "controlled")):
        seqs = [(getattr(c, key), c.timestamps) for c in cycles if len(c.timestamps) >= 2]
        row[f"{prefix}mse_tw"] = float(np.mean([coherence(f, t, mcfg.decay, "mse", mcfg.scale_255) for f, t in seqs]))
        row[f"{prefix}ssim_tw"] = float(np.mean([coherence(f, t, mcfg.decay, "ssim") for f, t in seqs]))
    return row


def rollout_cycles(store: ParamStore, train_cfg, dataset: Dataset, split: str = "all", seed: int = 0) -> list[CycleFrames]:
    """Stochastic and controlled rollouts over every cycle that has frames in ``split``.

    Each rollout runs over the whole condition sequence of the cycle; the
    frames kept are those at the entries carrying a ``split`` image.
    """
    mcfg = train_cfg.model
    wanted = set(dataset.split(split))
    out = []
    for c in range(len(dataset.cycles)):
        pids = [p for p in dataset.cycle_pairs(c) if p in wanted]
        if not pids:
            continue
        seq = dataset.sequence(c)
        at = dataset.pair_end[pids] - 1
        stoch = simulate_rollout(seq, store, mcfg, "stochastic", seed=seed + 1000 * c)
        ctrl = simulate_rollout(seq, store, mcfg, "controlled", seed=seed + 1000 * c)
        real = [dataset.frames[p].transpose(1, 2, 0) for p in pids]
        out.append(CycleFrames(dataset.elapsed[pids], real, [stoch.frames[i] for i in at],
                               [ctrl.frames[i] for i in at]))
    return out


def load_model(checkpoint: str | Path):
    """Parameters and training config stored in a checkpoint."""
    store, header = load_checkpoint(checkpoint)
    cfg_dict = header.get("extra", {}).get("train_config")
    if cfg_dict is None:
        raise ContractError(f"{checkpoint}: checkpoint carries no training config")
    return store, train_config_from_dict(cfg_dict), header


def evaluate_run(checkpoint: str | Path, dataset: Dataset, mcfg: MetricConfig | None = None, seed: int = 0,
                 fx: FeatureExtractor | None = None, label: str | None = None) -> dict:
    """One report row for a trained checkpoint."""
    mcfg = mcfg or MetricConfig()
    store, tcfg, header = load_model(checkpoint)
    cycles = rollout_cycles(store, tcfg, dataset, mcfg.split, seed)
    row = {"model": label or tcfg.baseline, "beta": tcfg.beta if tcfg.baseline != "cgan" else None}
    row.update(evaluate_frames(cycles, mcfg, fx))
    row["config_hash"] = header.get("config_hash", "")
    return row


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def report_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def write_report(out_dir: str | Path, rows: Sequence[dict], provenance: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(rows), encoding="utf-8")
    doc = {"columns": list(REPORT_COLUMNS), "rows": list(rows), **provenance}
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def metric_config_dict(mcfg: MetricConfig) -> dict:
    return asdict(mcfg)
