import numpy as np
import pytest

from sipgs.config import ModelConfig, TrainConfig
from sipgs.dataset import Dataset, SynthConfig, synth_generate


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(num / den)


def tiny_model(**kw) -> ModelConfig:
    base = dict(image_size=16, d_z=2, channels=(2, 2, 3, 3), x_dim=3, lstm_hidden=3, mlp_hidden=4)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train(**kw) -> TrainConfig:
    model = kw.pop("model", tiny_model())
    base = dict(epochs=3, patience=2, batch_size=4, seed=0, model=model)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_ds")
    synth_generate(SynthConfig(n_cycles=2, frames_per_cycle=10, canvas=16, seed=3), out)
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    return Dataset.load(tiny_dataset_dir / "manifest.json")


def full_sipgs_loss(store, cfg, batch, eps):
    """cvae + lambda*g_adv + d_loss on one batch with fixed noise, no detaching."""
    from sipgs import tensor as T
    from sipgs.genmodel import decode, discriminate, recognize, reparameterize
    from sipgs.seq_encoder import encode_prefixes
    from sipgs.training import cvae_loss, discriminator_loss, generator_adv_loss, kl_gaussian, recon_loss

    m = cfg.model
    y = T.Tensor(batch.frames)
    x = encode_prefixes(store, batch.seq_inputs, batch.t_index, batch.s_index)
    post = recognize(store, m, x, y)
    z = reparameterize(post, eps).z
    prev = batch.prev_frames if m.variant == "recurrent" else None
    y_hat = decode(store, m, z, x, prev)
    xd = x if m.disc_conditioning else None
    d_fake = discriminate(store, m, y_hat, xd)
    d_real = discriminate(store, m, y, xd)
    cv = cvae_loss(kl_gaussian(post.mu, post.log_var), recon_loss(y_hat, y), cfg.beta)
    return cv + cfg.lambda_adv * generator_adv_loss(d_fake) + discriminator_loss(d_real, d_fake)


def gradient_check_all(store, loss_fn) -> dict:
    """Per-parameter relative error between backprop and central differences."""
    from sipgs import tensor as T

    store.zero_grad()
    loss_fn().backward()
    errs = {}
    for n in store:
        with T.no_grad():
            fd = numeric_grad(lambda: loss_fn().item(), store[n].data)
        g = store[n].grad if store[n].grad is not None else np.zeros_like(fd)
        errs[n] = rel_err(g, fd)
    return errs


def generic_point(store, seed=0, scale=0.1):
    """Give every bias a small random value.

    Zero-initialised biases put ReLU inputs exactly on the kink wherever
    an input patch is all zeros, where finite differences see half a slope.
    """
    rng = np.random.default_rng(seed)
    for n in store:
        if n.endswith(".b"):
            store.set(n, store[n].data + rng.normal(scale=scale, size=store[n].shape))
    return store


def pytest_terminal_summary(terminalreporter):
    try:
        from _acceptance_log import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
