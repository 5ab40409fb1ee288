"""Objectives, alternating CVAE/GAN updates, and the epoch loop with early stopping.

One run draws every random number from a single ``numpy.random.Generator``
seeded with ``TrainConfig.seed``, in this order:

1. parameter initialisation (registration order of :func:`init_model`);
2. per epoch, the training-split permutation used by ``make_batches``;
3. per step, the latent noise block ``(B, d_z)`` (reparameterisation
   noise for SI-PGS, generator input noise for the cGAN baseline).

Validation never consumes randomness: it decodes the posterior mean
(SI-PGS) or the zero noise vector (cGAN).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .config import RunConfig, TrainConfig, config_hash
from .dataset import Batch, Dataset, make_batches
from .genmodel import decode, discriminate, init_model, recognize, reparameterize
from .params import ParamStore, adam_step, save_checkpoint
from .seq_encoder import encode_prefixes
from .tensor import ContractError, NumericalError, Tensor

log = logging.getLogger(__name__)

SCORE_CLAMP = 1e-7
HISTORY_COLUMNS = ("epoch", "step", "kl", "recon", "d_loss", "g_adv", "total", "val_recon")


class TrainingDivergence(ArithmeticError):
    """A loss term became non-finite; the message names the term."""


@dataclass
class LossReport:
    kl: float
    recon: float
    cvae: float
    d_loss: float
    g_adv: float
    total: float
    epoch: int = 0
    step: int = 0


# ---------------------------------------------------------------- objectives


def kl_gaussian(mu, log_var) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over latents, averaged over the batch."""
    mu, log_var = T._as_tensor(mu), T._as_tensor(log_var)
    per = T.square(mu) + T.exp(log_var) - 1.0 - log_var
    return 0.5 * T.sum(per) / mu.shape[0]


def recon_loss(y_hat, y) -> Tensor:
    """Pixel-summed squared error, averaged over the batch."""
    y_hat, y = T._as_tensor(y_hat), T._as_tensor(y)
    if y_hat.shape != y.shape:
        raise ContractError(f"recon_loss: shape mismatch {y_hat.shape} vs {y.shape}")
    return T.sum(T.square(y_hat - y)) / y.shape[0]


def cvae_loss(kl, recon, beta: float):
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    return beta * kl + (1.0 - beta) * recon


def discriminator_loss(d_real, d_fake) -> Tensor:
    d_real = T.clip(T._as_tensor(d_real), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    d_fake = T.clip(T._as_tensor(d_fake), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return -(T.mean(T.log(d_real)) + T.mean(T.log(1.0 - d_fake)))


def generator_adv_loss(d_fake) -> Tensor:
    """Non-saturating generator objective ``-mean log D(G)``."""
    d_fake = T.clip(T._as_tensor(d_fake), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return -T.mean(T.log(d_fake))


def gan_losses(d_real, d_fake) -> tuple[Tensor, Tensor]:
    return discriminator_loss(d_real, d_fake), generator_adv_loss(d_fake)


# ------------------------------------------------------------------ steps


def _finite(report: LossReport) -> None:
    for name in ("kl", "recon", "d_loss", "g_adv", "total"):
        if not np.isfinite(getattr(report, name)):
            raise TrainingDivergence(f"loss term {name!r} is non-finite ({getattr(report, name)})")


def _guard(term: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc_type is NumericalError:
                raise TrainingDivergence(f"non-finite value while computing {term}: {exc}") from exc
            return False

    return _Ctx()


def _groups(store: ParamStore) -> tuple[list[str], list[str]]:
    disc = store.names("disc.")
    return [n for n in store if not n.startswith("disc.")], disc


def _set_trainable(store: ParamStore, names: list[str], flag: bool) -> None:
    for n in names:
        store[n].requires_grad = flag


def _embed(store: ParamStore, cfg: TrainConfig, batch: Batch) -> Tensor:
    return encode_prefixes(store, batch.seq_inputs, batch.t_index, batch.s_index, cfg.model.max_window)


def _discriminator_update(store, cfg, y, fake, x, disc_names) -> float:
    mcfg = cfg.model
    xd = x.detach() if mcfg.disc_conditioning else None
    with _guard("d_loss"):
        d_real = discriminate(store, mcfg, y, xd)
        d_fake = discriminate(store, mcfg, fake.detach(), xd)
        d_loss = discriminator_loss(d_real, d_fake)
    store.zero_grad()
    d_loss.backward()
    adam_step(store, disc_names, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return d_loss.item()


def train_step_sipgs(batch: Batch, store: ParamStore, cfg: TrainConfig, rng: np.random.Generator) -> LossReport:
    """One discriminator update followed by one encoder/decoder update."""
    mcfg = cfg.model
    gen_names, disc_names = _groups(store)
    y = T.Tensor(batch.frames)
    with _guard("forward pass"):
        x = _embed(store, cfg, batch)
        post = recognize(store, mcfg, x, y)
        eps = rng.standard_normal(post.mu.shape)
        z = reparameterize(post, eps).z
        prev = batch.prev_frames if mcfg.variant == "recurrent" else None
        y_hat = decode(store, mcfg, z, x, prev)

    d_val = _discriminator_update(store, cfg, y, y_hat, x, disc_names)

    _set_trainable(store, disc_names, False)
    try:
        with _guard("generator objective"):
            kl = kl_gaussian(post.mu, post.log_var)
            rec = recon_loss(y_hat, y)
            cv = cvae_loss(kl, rec, cfg.beta)
            g_adv = generator_adv_loss(discriminate(store, mcfg, y_hat, x if mcfg.disc_conditioning else None))
            total = cv + cfg.lambda_adv * g_adv
        report = LossReport(kl.item(), rec.item(), cv.item(), d_val, g_adv.item(), total.item())
        _finite(report)
        store.zero_grad()
        total.backward()
    finally:
        _set_trainable(store, disc_names, True)
    adam_step(store, gen_names, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return report


def train_step_cgan(batch: Batch, store: ParamStore, cfg: TrainConfig, rng: np.random.Generator) -> LossReport:
    """Adversarial-only update: the generator sees ``[noise | x]``, no recognition model."""
    if cfg.baseline != "cgan":
        raise ContractError("train_step_cgan requires baseline == 'cgan'")
    mcfg = cfg.model
    gen_names, disc_names = _groups(store)
    y = T.Tensor(batch.frames)
    with _guard("forward pass"):
        x = _embed(store, cfg, batch)
        noise = rng.standard_normal((len(batch), mcfg.d_z))
        y_hat = decode(store, mcfg, noise, x)

    d_val = _discriminator_update(store, cfg, y, y_hat, x, disc_names)

    _set_trainable(store, disc_names, False)
    try:
        with _guard("generator objective"):
            g_adv = generator_adv_loss(discriminate(store, mcfg, y_hat, x if mcfg.disc_conditioning else None))
        with T.no_grad():
            rec = recon_loss(y_hat.detach(), y).item()
        report = LossReport(0.0, rec, 0.0, d_val, g_adv.item(), g_adv.item())
        _finite(report)
        store.zero_grad()
        g_adv.backward()
    finally:
        _set_trainable(store, disc_names, True)
    adam_step(store, gen_names, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return report


def train_step(batch: Batch, store: ParamStore, cfg: TrainConfig, rng: np.random.Generator) -> LossReport:
    if cfg.baseline == "cgan":
        return train_step_cgan(batch, store, cfg, rng)
    return train_step_sipgs(batch, store, cfg, rng)


# -------------------------------------------------------------- validation


def validation_recon(store: ParamStore, cfg: TrainConfig, dataset: Dataset, split: str = "val",
                     batch_size: int = 32) -> float:
    """Mean per-frame reconstruction loss on ``split`` without drawing random numbers."""
    mcfg = cfg.model
    total, count = 0.0, 0
    with T.no_grad():
        for batch in make_batches(dataset, split, batch_size, seed=0, epoch=0, shuffle=False):
            x = _embed(store, cfg, batch)
            if cfg.baseline == "cgan":
                z = np.zeros((len(batch), mcfg.d_z))
            else:
                z = recognize(store, mcfg, x, batch.frames).mu
            prev = batch.prev_frames if mcfg.variant == "recurrent" else None
            y_hat = decode(store, mcfg, z, x, prev)
            total += recon_loss(y_hat, batch.frames).item() * len(batch)
            count += len(batch)
    return total / count


# ------------------------------------------------------------ early stopping


@dataclass
class EarlyStopping:
    patience: int
    best: float = float("inf")
    best_epoch: int = 0
    wait: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record ``value`` for ``epoch``; True when training should stop."""
        if value < self.best:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


# -------------------------------------------------------------------- fit


@dataclass
class FitResult:
    store: ParamStore
    history: list[dict] = field(default_factory=list)
    reports: list[LossReport] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")
    stopped_early: bool = False
    checkpoint_sha256: str | None = None


def new_model(cfg: TrainConfig, rng: np.random.Generator) -> ParamStore:
    return init_model(cfg.model, rng, recognition=cfg.baseline != "cgan")


def fit(dataset: Dataset, cfg: TrainConfig, out_dir: str | Path | None = None,
        validate: Callable[[ParamStore, int], float] | None = None,
        run_config: RunConfig | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Train until ``cfg.epochs`` or until validation stalls for ``cfg.patience`` epochs.

    ``validate(store, epoch)`` overrides the default validation metric
    (reconstruction loss on the ``val`` split). The returned store holds the
    best-validation parameters. When ``out_dir`` is given, history.csv,
    periodic checkpoints, best.ckpt and run_manifest.json are written there.
    """
    if not dataset.split("train"):
        raise ContractError("training split is empty")
    if validate is None and not dataset.split("val"):
        raise ContractError("validation split is empty")
    rng = np.random.default_rng(cfg.seed)
    store = new_model(cfg, rng)
    chash = run_config.hash() if run_config is not None else config_hash(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    stopper = EarlyStopping(cfg.patience)
    result = FitResult(store)
    best: ParamStore | None = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(("kl", "recon", "d_loss", "g_adv", "total"), 0.0)
        n = 0
        for batch in _train_batches(dataset, cfg, rng, epoch):
            rep = train_step(batch, store, cfg, rng)
            step += 1
            rep.epoch, rep.step = epoch, step
            result.reports.append(rep)
            for k in sums:
                sums[k] += getattr(rep, k) * len(batch)
            n += len(batch)
        val = validate(store, epoch) if validate is not None else validation_recon(store, cfg, dataset)
        row = {"epoch": epoch, "step": step, **{k: v / n for k, v in sums.items()}, "val_recon": float(val)}
        result.history.append(row)
        log.info("epoch %d: recon %.4f kl %.4f d %.4f g %.4f val %.4f", epoch, row["recon"], row["kl"],
                 row["d_loss"], row["g_adv"], val)
        if on_epoch is not None:
            on_epoch(row)
        stop = stopper.update(float(val), epoch)
        if stopper.best_epoch == epoch:
            best = store.copy()
        if out is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"epoch_{epoch:03d}.ckpt", store, chash, _ckpt_extra(cfg, dataset, epoch))
        if stop:
            result.stopped_early = True
            break

    if best is not None:
        store.restore(best.snapshot())
        store.state, store.step = best.state, best.step
    result.best_epoch, result.best_val = stopper.best_epoch, stopper.best
    if out is not None:
        result.checkpoint_sha256 = save_checkpoint(
            out / "best.ckpt", store, chash, _ckpt_extra(cfg, dataset, stopper.best_epoch)
        )
        write_history(out / "history.csv", result.history)
        manifest = {
            "config": run_config.to_dict() if run_config is not None else {"train": _train_dict(cfg)},
            "config_hash": chash,
            "seed": cfg.seed,
            "baseline": cfg.baseline,
            "beta": cfg.beta,
            "normalization": dataset.stats.to_dict(),
            "epochs_run": len(result.history),
            "best_epoch": stopper.best_epoch,
            "best_val_recon": stopper.best,
            "stopped_early": result.stopped_early,
            "best_checkpoint": "best.ckpt",
            "best_checkpoint_sha256": result.checkpoint_sha256,
            "parameter_count": store.count(),
        }
        (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def _train_batches(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator, epoch: int) -> Iterator[Batch]:
    return make_batches(dataset, "train", cfg.batch_size, rng=rng, epoch=epoch)


def _train_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["model"]["channels"] = list(cfg.model.channels)
    return d


def _ckpt_extra(cfg: TrainConfig, dataset: Dataset, epoch: int) -> dict:
    return {"train_config": _train_dict(cfg), "normalization": dataset.stats.to_dict(), "epoch": epoch}


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if k not in ("epoch", "step") else int(v)) for k, v in row.items()})
