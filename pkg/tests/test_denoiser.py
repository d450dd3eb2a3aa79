import pytest
import torch

from conftest import finite_difference_block_errors, randomize_parameters, tiny_config, tiny_inputs

from ccdd.denoiser import DenoiserConfig, backward, build_denoiser
from ccdd.errors import ConfigError, InputError

ARCHS = ["mdit", "mmdit", "moedit"]


def build(arch, dtype=torch.float64, **kw):
    model = build_denoiser(tiny_config(arch, **kw), seed=1).to(dtype)
    randomize_parameters(model)
    return model


@pytest.mark.parametrize("arch", ARCHS)
def test_output_shapes(arch):
    model = build(arch)
    cfg = model.config
    x, z, t = tiny_inputs(cfg)
    out = model(x, z, t)
    assert out.eps_hat.shape == z.shape
    assert out.logits.shape == (*x.shape, cfg.vocab_augmented)
    assert torch.isfinite(out.eps_hat).all() and torch.isfinite(out.logits).all()


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_deterministic(arch):
    model = build(arch)
    x, z, t = tiny_inputs(model.config)
    a = model(x, z, t)
    b = model(x, z, t)
    assert torch.equal(a.eps_hat, b.eps_hat)
    assert torch.equal(a.logits, b.logits)


@pytest.mark.parametrize("arch", ARCHS)
def test_drop_continuous_ignores_latents(arch):
    model = build(arch)
    cfg = model.config
    x, z, t = tiny_inputs(cfg)
    ref = model(x, z, t, drop_continuous=True)
    gen = torch.Generator().manual_seed(99)
    for _ in range(10):
        z_other = torch.randn(z.shape, generator=gen, dtype=z.dtype) * 3.0
        out = model(x, z_other, t, drop_continuous=True)
        assert torch.equal(out.logits, ref.logits)
        assert torch.equal(out.eps_hat, torch.zeros_like(out.eps_hat))


def test_drop_continuous_per_sequence():
    model = build("mdit")
    x, z, t = tiny_inputs(model.config, batch=3)
    drop = torch.tensor([True, False, True])
    out = model(x, z, t, drop_continuous=drop)
    assert torch.equal(out.eps_hat[0], torch.zeros_like(out.eps_hat[0]))
    assert torch.equal(out.eps_hat[2], torch.zeros_like(out.eps_hat[2]))
    assert not torch.equal(out.eps_hat[1], torch.zeros_like(out.eps_hat[1]))


@pytest.mark.parametrize("arch", ARCHS)
def test_permutation_equivariance_without_positions(arch):
    model = build(arch, use_rotary=False)
    x, z, t = tiny_inputs(model.config, length=6)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
    out = model(x, z, t)
    out_p = model(x[:, perm], z[:, perm], t)
    assert torch.allclose(out.logits[:, perm], out_p.logits, atol=1e-10)
    assert torch.allclose(out.eps_hat[:, perm], out_p.eps_hat, atol=1e-10)


@pytest.mark.parametrize("arch", ARCHS)
def test_positions_matter_with_rotary(arch):
    model = build(arch, use_rotary=True)
    x, z, t = tiny_inputs(model.config, length=6)
    perm = torch.tensor([1, 0, 3, 2, 5, 4])
    out = model(x, z, t)
    out_p = model(x[:, perm], z[:, perm], t)
    assert not torch.allclose(out.logits[:, perm], out_p.logits, atol=1e-6)


def test_moedit_gates_are_probabilities():
    model = build("moedit")
    x, z, t = tiny_inputs(model.config)
    out = model(x, z, t, collect_gates=True)
    assert out.moe_gates and len(out.moe_gates) == model.config.n_layers
    for gates in out.moe_gates:
        assert torch.all(gates >= 0)
        sums = gates.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_timestep_changes_output():
    model = build("mdit")
    x, z, t = tiny_inputs(model.config)
    out_a = model(x, z, t)
    out_b = model(x, z, t * 0.5)
    assert not torch.allclose(out_a.logits, out_b.logits, atol=1e-6)


def test_shape_and_range_errors():
    model = build("mdit")
    cfg = model.config
    x, z, t = tiny_inputs(cfg)
    with pytest.raises(InputError):
        model(x, z[:, :2], t)
    with pytest.raises(InputError):
        model(x, z[..., :3], t)
    with pytest.raises(InputError):
        model(x.clone().fill_(cfg.vocab_augmented), z, t)
    with pytest.raises(InputError):
        model(x, z, t[:1])


def test_config_validation():
    with pytest.raises(ConfigError):
        DenoiserConfig(arch="mdit", d_model=30, n_heads=4)
    with pytest.raises(ConfigError):
        DenoiserConfig(arch="moedit", n_experts=1)
    with pytest.raises(ConfigError):
        DenoiserConfig(arch="unknown")
    with pytest.raises(ConfigError):
        DenoiserConfig(arch="mdit", fuse="stack")


def test_fuse_add_variant_runs():
    model = build("mdit", fuse="add")
    x, z, t = tiny_inputs(model.config)
    out = model(x, z, t)
    assert torch.isfinite(out.logits).all()


class TestBackward:
    def test_zero_cotangent_gives_zero_gradients(self):
        model = build("mdit")
        x, z, t = tiny_inputs(model.config)
        out = model(x, z, t)
        grads = backward(model, out, torch.zeros_like(out.eps_hat), torch.zeros_like(out.logits))
        assert all(torch.equal(g, torch.zeros_like(g)) for g in grads.values())

    def test_linearity_in_cotangent(self):
        model = build("mdit")
        x, z, t = tiny_inputs(model.config)
        gen = torch.Generator().manual_seed(3)
        c1e = torch.randn(2, 4, 6, generator=gen, dtype=torch.float64)
        c1l = torch.randn(2, 4, 9, generator=gen, dtype=torch.float64)
        c2e = torch.randn(2, 4, 6, generator=gen, dtype=torch.float64)
        c2l = torch.randn(2, 4, 9, generator=gen, dtype=torch.float64)
        g1 = backward(model, model(x, z, t), c1e, c1l)
        g2 = backward(model, model(x, z, t), c2e, c2l)
        g12 = backward(model, model(x, z, t), c1e + c2e, c1l + c2l)
        for name in g1:
            assert torch.allclose(g12[name], g1[name] + g2[name], atol=1e-10)

    def test_cotangent_shape_mismatch(self):
        model = build("mdit")
        x, z, t = tiny_inputs(model.config)
        out = model(x, z, t)
        with pytest.raises(InputError):
            backward(model, out, torch.zeros(1, 1, 6, dtype=torch.float64),
                     torch.zeros_like(out.logits))


@pytest.mark.parametrize("arch", ARCHS)
def test_gradients_match_finite_differences(arch):
    model = build(arch, d_model=8, d_latent=4, vocab_augmented=7)
    x, z, t = tiny_inputs(model.config, batch=1, length=3)
    errors = finite_difference_block_errors(model, x, z, t)
    worst = max(errors.values())
    assert worst < 1e-4, f"worst block {max(errors, key=errors.get)}: {worst}"
