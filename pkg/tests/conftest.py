import torch

torch.set_num_threads(1)

from ccdd.denoiser import DenoiserConfig, build_denoiser


def tiny_config(arch: str, **kw) -> DenoiserConfig:
    base = dict(arch=arch, n_layers=2, d_model=16, n_heads=2, d_latent=6, vocab_augmented=9)
    base.update(kw)
    return DenoiserConfig(**base)


def randomize_parameters(model, seed: int = 7, std: float = 0.1) -> None:
    """Fill every parameter with random values so zero-initialized gates and
    heads participate in gradient checks."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)


def tiny_inputs(config: DenoiserConfig, batch=2, length=4, seed=5, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randint(0, config.vocab_augmented, (batch, length), generator=gen)
    z = torch.randn(batch, length, config.d_latent, generator=gen, dtype=dtype)
    t = torch.rand(batch, generator=gen, dtype=dtype) * 0.8 + 0.1
    return x, z, t


def finite_difference_block_errors(model, x, z, t, seed=11, h=1e-4) -> dict[str, float]:
    """Central finite differences of a random linear functional of the output,
    compared blockwise against reverse-mode gradients."""
    from ccdd.denoiser import backward

    gen = torch.Generator().manual_seed(seed)
    out = model(x, z, t)
    cot_eps = torch.randn(out.eps_hat.shape, generator=gen, dtype=torch.float64)
    cot_logits = torch.randn(out.logits.shape, generator=gen, dtype=torch.float64)
    grads = backward(model, out, cot_eps, cot_logits)

    def scalar() -> float:
        with torch.no_grad():
            o = model(x, z, t)
            return float((o.eps_hat * cot_eps).sum() + (o.logits * cot_logits).sum())

    errors = {}
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        fd = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = scalar()
            flat[i] = orig - h
            down = scalar()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        fd = fd.view(p.shape)
        denom = max(float(fd.norm()), 1e-10)
        errors[name] = float((fd - grads[name]).norm()) / denom
    return errors
