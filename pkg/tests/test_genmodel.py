import numpy as np
import pytest

from sipgs import tensor as T
from sipgs.genmodel import (GaussianParams, decode, discriminate, generate, generate_recurrent, init_model,
                            recognize, reparameterize, simulate_rollout)
from sipgs.params import ParamStore
from sipgs.tensor import ContractError

from conftest import full_sipgs_loss, generic_point, gradient_check_all, numeric_grad, rel_err, tiny_model, tiny_train


def _zeroed(store: ParamStore) -> ParamStore:
    for n in store:
        store.set(n, np.zeros_like(store[n].data))
    return store


def _inputs(cfg, B=2, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(size=(B, 3, cfg.image_size, cfg.image_size))
    x = rng.normal(size=(B, cfg.x_dim))
    z = rng.normal(size=(B, cfg.d_z))
    return x, y, z


def test_default_architecture_shapes():
    from sipgs.config import ModelConfig

    cfg = ModelConfig()
    store = init_model(cfg, np.random.default_rng(0))
    assert store["rec.conv0.w"].shape == (32, 3, 4, 4)
    assert store["rec.conv3.w"].shape == (256, 128, 4, 4)
    assert store["gen.proj.w"].shape == (32 + 32, 256 * 4 * 4)
    assert store["gen.deconv0.w"].shape == (256, 128, 4, 4)
    assert store["gen.deconv3.w"].shape == (32, 3, 4, 4)
    assert store["disc.conv3.w"].shape == (256, 128 + 32, 4, 4)
    with T.no_grad():
        out = generate(store, cfg, np.zeros((1, 32)), np.zeros((1, 32)))
    assert out.shape == (1, 3, 64, 64)


def test_zero_recognition_gives_standard_normal():
    cfg = tiny_model()
    store = _zeroed(init_model(cfg, np.random.default_rng(0)))
    x, y, _ = _inputs(cfg)
    p = recognize(store, cfg, x, y)
    assert not p.mu.data.any() and not p.log_var.data.any()


def test_recognize_deterministic_and_shape_checked():
    cfg = tiny_model()
    store = init_model(cfg, np.random.default_rng(1))
    x, y, _ = _inputs(cfg)
    a, b = recognize(store, cfg, x, y), recognize(store, cfg, x, y)
    assert np.array_equal(a.mu.data, b.mu.data) and np.array_equal(a.log_var.data, b.log_var.data)
    with pytest.raises(ContractError):
        recognize(store, cfg, x[:, :2], y)
    with pytest.raises(ContractError):
        recognize(store, cfg, x, y[:, :, :8])


def test_log_var_is_clamped():
    cfg = tiny_model()
    store = init_model(cfg, np.random.default_rng(0))
    store.set("rec.logvar.b", np.full(cfg.d_z, 50.0))
    x, y, _ = _inputs(cfg)
    assert recognize(store, cfg, x, y).log_var.data.max() == 10.0


def test_reparameterize_examples():
    mu = T.Tensor(np.array([[0.3]]))
    lv = T.Tensor(np.array([[2 * np.log(0.5)]]))
    assert reparameterize(GaussianParams(mu, lv), np.zeros((1, 1))).z.data[0, 0] == 0.3
    assert reparameterize(GaussianParams(mu, lv), np.array([[2.0]])).z.data[0, 0] == pytest.approx(1.3, abs=1e-15)
    with pytest.raises(ContractError):
        reparameterize(GaussianParams(mu, lv), np.zeros((1, 2)))


def test_reparameterize_is_differentiable():
    mu = T.Tensor(np.array([[0.1, -0.2]]), requires_grad=True)
    lv = T.Tensor(np.array([[0.3, -0.5]]), requires_grad=True)
    eps = np.array([[1.5, -0.7]])
    T.sum(reparameterize(GaussianParams(mu, lv), eps).z).backward()
    assert np.array_equal(mu.grad, np.ones((1, 2)))
    np.testing.assert_allclose(lv.grad, 0.5 * np.exp(0.5 * lv.data) * eps, rtol=1e-15)


def test_zero_decoder_gives_gray_frame():
    cfg = tiny_model()
    store = _zeroed(init_model(cfg, np.random.default_rng(0)))
    x, _, z = _inputs(cfg)
    out = generate(store, cfg, z, x).data
    assert out.shape == (2, 3, 16, 16) and np.all(out == 0.5)


def test_generate_deterministic_and_in_range():
    cfg = tiny_model()
    store = init_model(cfg, np.random.default_rng(2))
    x, _, z = _inputs(cfg, B=3)
    a, b = generate(store, cfg, z * 5, x * 5).data, generate(store, cfg, z * 5, x * 5).data
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_variant_dispatch_errors():
    std, rec = tiny_model(), tiny_model(variant="recurrent")
    x, y, z = _inputs(std)
    with pytest.raises(ContractError, match="generate_recurrent"):
        generate(init_model(rec, np.random.default_rng(0)), rec, z, x)
    with pytest.raises(ContractError, match="use generate"):
        generate_recurrent(init_model(std, np.random.default_rng(0)), std, z, x, y)


def test_recurrent_uses_previous_frame():
    cfg = tiny_model(variant="recurrent")
    store = init_model(cfg, np.random.default_rng(3))
    x, y, z = _inputs(cfg)
    zero = np.zeros_like(y)
    a = generate_recurrent(store, cfg, z, x, zero).data
    assert a.shape == y.shape and 0.0 <= a.min() and a.max() <= 1.0
    assert np.array_equal(a, generate_recurrent(store, cfg, z, x, zero).data)
    assert np.abs(a - generate_recurrent(store, cfg, z, x, y).data).max() > 1e-9
    assert np.array_equal(decode(store, cfg, z, x).data, a)


def test_zero_discriminator_is_half():
    cfg = tiny_model()
    store = _zeroed(init_model(cfg, np.random.default_rng(0)))
    x, y, _ = _inputs(cfg)
    assert np.all(discriminate(store, cfg, y, x).data == 0.5)


def test_discriminator_range_over_many_inputs():
    cfg = tiny_model()
    rng = np.random.default_rng(9)
    store = init_model(cfg, rng)
    y = rng.uniform(size=(1000, 3, 16, 16))
    x = rng.normal(size=(1000, cfg.x_dim)) * 3
    with T.no_grad():
        d = discriminate(store, cfg, y, x).data
    assert d.shape == (1000, 1) and np.all((d > 0) & (d < 1))


def test_discriminator_conditioning_flag():
    cfg = tiny_model(disc_conditioning=False)
    store = init_model(cfg, np.random.default_rng(0))
    assert store["disc.conv3.w"].shape[1] == cfg.channels[2]
    _, y, _ = _inputs(cfg)
    assert discriminate(store, cfg, y).shape == (2, 1)
    with pytest.raises(ContractError):
        discriminate(init_model(tiny_model(), np.random.default_rng(0)), tiny_model(), y)


def test_log_d_gradient_wrt_frames():
    cfg = tiny_model()
    store = generic_point(init_model(cfg, np.random.default_rng(4)))
    x, y, _ = _inputs(cfg, B=1, seed=4)
    yt = T.Tensor(y, requires_grad=True)
    T.sum(T.log(discriminate(store, cfg, yt, x))).backward()
    with T.no_grad():
        fd = numeric_grad(lambda: float(np.log(discriminate(store, cfg, y, x).data).sum()), y)
    assert rel_err(yt.grad, fd) <= 1e-4


def test_recognition_gradients():
    cfg = tiny_model()
    store = generic_point(init_model(cfg, np.random.default_rng(5)))
    x, y, _ = _inputs(cfg, seed=5)

    def loss():
        p = recognize(store, cfg, x, y)
        return T.sum(T.square(p.mu)) + T.sum(T.exp(p.log_var))

    errs = gradient_check_all(store, loss)
    rec = {n: e for n, e in errs.items() if n.startswith("rec.")}
    assert rec and max(rec.values()) <= 1e-4, rec


def test_gradient_reaches_sequence_encoder():
    cfg = tiny_model()
    store = init_model(cfg, np.random.default_rng(6))
    from sipgs.seq_encoder import encode_prefixes

    block = np.random.default_rng(6).normal(size=(4, 1, 8))
    x = encode_prefixes(store, block, np.array([3, 1]), np.array([0, 0]))
    T.sum(generate(store, cfg, np.zeros((2, cfg.d_z)), x)).backward()
    for n in store.names("seq."):
        assert store[n].grad is not None and np.abs(store[n].grad).max() > 0, n


@pytest.mark.parametrize("variant", ["standard", "recurrent"])
def test_full_objective_gradient_check(tiny_dataset, variant):
    cfg = tiny_train(model=tiny_model(variant=variant))
    store = generic_point(init_model(cfg.model, np.random.default_rng(11)))
    batch = tiny_dataset.assemble([1, 12])
    eps = np.random.default_rng(12).normal(size=(2, cfg.model.d_z))
    errs = gradient_check_all(store, lambda: full_sipgs_loss(store, cfg, batch, eps))
    worst = max(errs, key=errs.get)
    assert errs[worst] <= 1e-4, f"{worst}: {errs[worst]:.2e}"


# ------------------------------------------------------------------ rollouts


def _rollout_setup(variant="standard"):
    from sipgs.seq_encoder import EnvSequence

    cfg = tiny_model(variant=variant)
    store = init_model(cfg, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    vals = rng.normal(size=(5, 8))
    vals[:, 6] = np.arange(5) * 600 / 86400
    vals[:, 7] = np.r_[0, np.full(4, 600 / 3600)]
    return cfg, store, EnvSequence(vals, normalized=True)


@pytest.mark.parametrize("variant", ["standard", "recurrent"])
def test_controlled_rollout_is_reproducible(variant):
    cfg, store, seq = _rollout_setup(variant)
    a = simulate_rollout(seq, store, cfg, "controlled", seed=3)
    b = simulate_rollout(seq, store, cfg, "controlled", seed=3)
    assert len(a.frames) == len(seq)
    assert all(fa.tobytes() == fb.tobytes() for fa, fb in zip(a.frames, b.frames))
    assert np.all(a.z == a.z[0])
    assert all(f.shape == (16, 16, 3) and f.min() >= 0 and f.max() <= 1 for f in a.frames)


def test_controlled_rollout_with_fixed_z():
    cfg, store, seq = _rollout_setup()
    z = np.linspace(-1, 1, cfg.d_z)
    r = simulate_rollout(seq, store, cfg, "controlled", z_fixed=z)
    assert np.array_equal(r.z[3], z)
    other = simulate_rollout(seq, store, cfg, "controlled", z_fixed=-z)
    assert max(np.abs(f1 - f2).max() for f1, f2 in zip(r.frames, other.frames)) > 1e-9
    with pytest.raises(ContractError):
        simulate_rollout(seq, store, cfg, "controlled", z_fixed=np.zeros(cfg.d_z + 1))


def test_stochastic_rollout_seeds_differ():
    cfg, store, seq = _rollout_setup()
    a = simulate_rollout(seq, store, cfg, "stochastic", seed=1)
    b = simulate_rollout(seq, store, cfg, "stochastic", seed=2)
    assert not np.array_equal(a.z, b.z)
    assert max(np.abs(f1 - f2).max() for f1, f2 in zip(a.frames, b.frames)) > 1e-9


def test_rollout_matches_per_prefix_generation():
    from sipgs.seq_encoder import encode_sequence

    cfg, store, seq = _rollout_setup()
    r = simulate_rollout(seq, store, cfg, "stochastic", seed=5)
    for t in range(len(seq)):
        x = encode_sequence(seq.prefix(t + 1), store)
        with T.no_grad():
            f = generate(store, cfg, r.z[t : t + 1], x[None]).data[0].transpose(1, 2, 0)
        np.testing.assert_allclose(r.frames[t], f, rtol=0, atol=1e-12)


def test_rollout_rejects_raw_sequence():
    from sipgs.seq_encoder import EnvSequence

    cfg, store, seq = _rollout_setup()
    with pytest.raises(ContractError):
        simulate_rollout(EnvSequence(seq.values), store, cfg)
