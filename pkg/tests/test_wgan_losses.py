import numpy as np
import pytest
import torch

import binv.networks as nets
import binv.wgan_training as wt


def toy_setup(batch=3, size=4, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    cfg = nets.NetConfig(
        image_size=size, base_channels=4, n_scales=0, fc_width=8,
        use_batchnorm=False, zero_init_head=False,
    )
    gen = nets.build_generator(cfg, seed=seed)
    disc = nets.build_discriminator(cfg, seed=seed + 1)
    gen.module.to(dtype).eval()
    disc.module.to(dtype).eval()
    x = torch.randn(batch, 1, size, size, dtype=dtype)
    y = torch.randn(batch, 1, size, size, dtype=dtype)
    return gen, disc, wt.make_wgan_batch(x, y)


class FnCritic:
    """Stand-in critic defined by an arbitrary per-item function."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, *inputs):
        return self.fn(*inputs)


# ---------------------------------------------------------------------------
# independent scalar re-implementations (the oracle side)
# ---------------------------------------------------------------------------

def scalar_core_loss(batch, gen, disc, form):
    total = 0.0
    for i in range(batch.x.shape[0]):
        x, y = batch.x[i : i + 1], batch.y[i : i + 1]
        z1, z2 = batch.z1[i : i + 1], batch.z2[i : i + 1]
        with torch.no_grad():
            g1, g2 = gen(z1, y), gen(z2, y)
            if form == "symmetrized_z1":
                mixed = 0.5 * (disc(x, g1, y).item() + disc(g1, x, y).item())
            else:
                mixed = 0.5 * (disc(x, g2, y).item() + disc(g1, x, y).item())
            total += mixed - disc(g1, g2, y).item()
    return total / batch.x.shape[0]


def fd_pair_gradient(disc, u1, u2, y, h=1e-6):
    """Critic gradient w.r.t. the pair argument by central differences."""
    grads = []
    for u in (u1, u2):
        g = torch.zeros_like(u)
        flat = u.view(-1)
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + h
            fp = disc(u1, u2, y).item()
            flat[k] = orig - h
            fm = disc(u1, u2, y).item()
            flat[k] = orig
            g.view(-1)[k] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def scalar_gradient_penalty(batch, gen, disc):
    total = 0.0
    for i in range(batch.x.shape[0]):
        x, y = batch.x[i : i + 1], batch.y[i : i + 1]
        z1, z2 = batch.z1[i : i + 1], batch.z2[i : i + 1]
        e = batch.eps[i].item()
        with torch.no_grad():
            g1, g2 = gen(z1, y), gen(z2, y)
            a1 = (e * x + (1 - e) * g1, e * g1 + (1 - e) * g2)
            a2 = (e * g1 + (1 - e) * g1, e * x + (1 - e) * g2)
            d1 = fd_pair_gradient(disc, a1[0].clone(), a1[1].clone(), y)
            d2 = fd_pair_gradient(disc, a2[0].clone(), a2[1].clone(), y)
            gamma = [0.5 * (d1[0] + d2[0]), 0.5 * (d1[1] + d2[1])]
            norm = float(torch.sqrt(gamma[0].square().sum() + gamma[1].square().sum()))
            total += (norm - 1.0) ** 2
    return total / batch.x.shape[0]


def scalar_drift(batch, disc):
    total = 0.0
    for i in range(batch.x.shape[0]):
        x, y = batch.x[i : i + 1], batch.y[i : i + 1]
        with torch.no_grad():
            total += disc(x, x, y).item() ** 2
    return total / batch.x.shape[0]


# ---------------------------------------------------------------------------
# exactness vs the scalar oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("form", wt.CORE_LOSS_FORMS)
def test_core_loss_matches_scalar(form):
    gen, disc, batch = toy_setup(seed=2)
    loss = wt.wgan_core_loss(batch, gen, disc, form).item()
    assert loss == pytest.approx(scalar_core_loss(batch, gen, disc, form), abs=1e-6)


def test_gradient_penalty_matches_scalar():
    gen, disc, batch = toy_setup(seed=3)
    gp = wt.gradient_penalty(batch, gen, disc).item()
    assert gp == pytest.approx(scalar_gradient_penalty(batch, gen, disc), abs=1e-6)


def test_drift_matches_scalar():
    gen, disc, batch = toy_setup(seed=4)
    drift = wt.drift_penalty(batch, disc).item()
    assert drift == pytest.approx(scalar_drift(batch, disc), abs=1e-6)


# ---------------------------------------------------------------------------
# closed-form identities
# ---------------------------------------------------------------------------

def test_constant_critic_zero_core_loss():
    gen, _, batch = toy_setup(seed=5)
    const = FnCritic(lambda x1, x2, y: torch.full((x1.shape[0],), 3.7, dtype=x1.dtype))
    for form in wt.CORE_LOSS_FORMS:
        assert wt.wgan_core_loss(batch, gen, const, form).item() == pytest.approx(0.0, abs=1e-12)


def test_y_only_critic_zero_core_loss():
    gen, _, batch = toy_setup(seed=6)
    critic = FnCritic(lambda x1, x2, y: y.flatten(1).sum(dim=1))
    assert wt.wgan_core_loss(batch, gen, critic, "symmetrized_z1").item() == pytest.approx(
        0.0, abs=1e-10
    )


def test_unit_gradient_linear_critic_zero_penalty():
    gen, _, batch = toy_setup(seed=7)
    u = torch.randn(1, 1, 4, 4, dtype=torch.float64)
    u /= torch.sqrt(u.square().sum())
    critic = FnCritic(lambda x1, x2, y: (x1 * u).flatten(1).sum(dim=1))
    gp = wt.gradient_penalty(batch, gen, critic).item()
    assert gp == pytest.approx(0.0, abs=1e-10)


def test_constant_critic_unit_penalty():
    gen, _, batch = toy_setup(seed=8)
    const = FnCritic(lambda x1, x2, y: torch.zeros(x1.shape[0], dtype=x1.dtype))
    assert wt.gradient_penalty(batch, gen, const).item() == pytest.approx(1.0, abs=1e-10)


def test_drift_constant_critic_values():
    _, disc, batch = toy_setup(seed=9)
    zero = FnCritic(lambda x1, x2, y: torch.zeros(x1.shape[0], dtype=x1.dtype))
    two = FnCritic(lambda x1, x2, y: torch.full((x1.shape[0],), 2.0, dtype=x1.dtype))
    assert wt.drift_penalty(batch, zero).item() == pytest.approx(0.0, abs=1e-12)
    assert wt.drift_penalty(batch, two).item() == pytest.approx(4.0, abs=1e-12)


def test_mixed_term_symmetric_under_pair_swap():
    gen, disc, batch = toy_setup(seed=10)

    def mixed(d):
        with torch.no_grad():
            g1 = gen(batch.z1, batch.y)
            return (0.5 * (d(batch.x, g1, batch.y) + d(g1, batch.x, batch.y))).mean().item()

    swapped = FnCritic(lambda x1, x2, y: disc(x2, x1, y))
    assert mixed(disc) == pytest.approx(mixed(swapped), abs=1e-12)


def test_core_loss_invariant_to_critic_constant_but_disc_loss_not():
    gen, disc, batch = toy_setup(seed=11)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    shifted = FnCritic(lambda x1, x2, y: disc(x1, x2, y) + 5.0)
    base = wt.wgan_core_loss(batch, gen, disc, cfg.core_loss_form).item()
    shift = wt.wgan_core_loss(batch, gen, shifted, cfg.core_loss_form).item()
    assert base == pytest.approx(shift, abs=1e-9)
    assert wt.drift_penalty(batch, shifted).item() != pytest.approx(
        wt.drift_penalty(batch, disc).item(), abs=1e-3
    )


def test_discriminator_loss_weighted_sum_arithmetic():
    gen, disc, batch = toy_setup(seed=12)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    loss, comps = wt.discriminator_loss(batch, gen, disc, cfg)
    expected = (
        -comps["core"]
        + cfg.lambda_gp * comps["grad_penalty"]
        + cfg.lambda_drift * comps["drift"]
        + cfg.weight_decay * comps["disc_weight_sq"]
    )
    assert loss.item() == pytest.approx(expected, rel=1e-10)
    # the spec'd arithmetic instance of the same composition
    assert -(-0.5) + 10 * 0.2 + 1e-3 * 4.0 + 1e-4 * 1.0 == pytest.approx(2.5041)


def test_generator_loss_composition():
    gen, disc, batch = toy_setup(seed=13)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    core = wt.wgan_core_loss(batch, gen, disc, cfg.core_loss_form).item()
    wd = sum((p**2).sum().item() for p in gen.parameters())
    assert wt.generator_loss(batch, gen, disc, cfg).item() == pytest.approx(
        core + 1e-4 * wd, rel=1e-9
    )


# ---------------------------------------------------------------------------
# parameter gradients vs finite differences
# ---------------------------------------------------------------------------

def fd_param_check(loss_fn, module, n_coords=60, h=1e-5, seed=0):
    loss = loss_fn()
    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    checked = 0
    max_rel = 0.0
    gmax = max(
        (g.abs().max().item() for g in grads if g is not None), default=1.0
    )
    for p, g in zip(params, grads):
        if g is None:
            continue
        flat, gflat = p.data.view(-1), g.view(-1)
        for k in rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
            orig = flat[k].item()
            flat[k] = orig + h
            fp = loss_fn().item()
            flat[k] = orig - h
            fm = loss_fn().item()
            flat[k] = orig
            fd = (fp - fm) / (2 * h)
            max_rel = max(max_rel, abs(fd - gflat[k].item()) / (gmax + 1e-9))
            checked += 1
            if checked >= n_coords:
                return max_rel
    return max_rel


def test_discriminator_loss_param_gradients():
    gen, disc, batch = toy_setup(seed=14)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    rel = fd_param_check(
        lambda: wt.discriminator_loss(batch, gen, disc, cfg)[0], disc.module
    )
    assert rel <= 1e-3


def test_generator_loss_param_gradients():
    gen, disc, batch = toy_setup(seed=15)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    rel = fd_param_check(lambda: wt.generator_loss(batch, gen, disc, cfg), gen.module)
    assert rel <= 1e-3


def test_single_image_losses_and_gradients():
    torch.manual_seed(16)
    cfg_net = nets.NetConfig(
        image_size=4, base_channels=4, n_scales=0, fc_width=8,
        use_batchnorm=False, zero_init_head=False,
    )
    gen = nets.build_generator(cfg_net, seed=16)
    disc = nets.build_discriminator(cfg_net, paired=False, seed=17)
    gen.module.double().eval()
    disc.module.double().eval()
    x = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    y = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    batch = wt.make_wgan_batch(x, y)
    cfg = wt.TrainConfig(steps=1, batch_size=3, seed=0)

    const = FnCritic(lambda a, b: torch.full((a.shape[0],), 1.5, dtype=a.dtype))
    assert wt.wgan_core_loss_single(batch, gen, const).item() == pytest.approx(0.0, abs=1e-12)
    rel = fd_param_check(
        lambda: wt.discriminator_loss_single(batch, gen, disc, cfg)[0], disc.module
    )
    assert rel <= 1e-3


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def test_make_batch_shapes_and_freshness():
    torch.manual_seed(0)
    x = torch.randn(4, 1, 8, 8)
    y = torch.randn(4, 1, 8, 8)
    b1 = wt.make_wgan_batch(x, y)
    b2 = wt.make_wgan_batch(x, y)
    assert b1.z1.shape == x.shape and b1.eps.shape == (4, 1, 1, 1)
    assert not torch.equal(b1.z1, b2.z1)
    assert not torch.equal(b1.z1, b1.z2)
    assert (b1.eps >= 0).all() and (b1.eps <= 1).all()


def test_train_config_validation():
    with pytest.raises(ValueError):
        wt.TrainConfig(disc_steps_per_gen=0)
    with pytest.raises(ValueError):
        wt.TrainConfig(core_loss_form="bogus")
    cfg = wt.TrainConfig()
    assert cfg.adam_beta1 == 0.5 and cfg.adam_beta2 == 0.9
    assert cfg.lr0 == 2e-4 and cfg.lambda_gp == 10.0
    assert cfg.lambda_drift == 1e-3 and cfg.weight_decay == 1e-4
    assert cfg.disc_steps_per_gen == 5
    assert cfg.batchnorm_decay == 0.9 and cfg.batchnorm_eps == 1e-5
