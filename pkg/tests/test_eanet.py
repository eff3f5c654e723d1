import pytest
import torch

from ediffsr import nncore
from ediffsr.cpem import CpemConfig
from ediffsr.eanet import EAB, EANet, EanetConfig, count_parameters
from ediffsr.model import EDiffSR

TOY = EanetConfig(base_channels=16, enc_counts=[2, 1, 1, 1], dec_counts=[1, 1, 1, 1], mid_count=1)
TOY_CPEM = CpemConfig(n_rcab=2, channels=32, scale=4, ca_reduction=16)


def enumerate_parameters(c, enc, dec, mid, td, img=3):
    """Layer-by-layer count, written out independently of the module builder."""

    def conv(cin, cout, k, bias=True, groups=1):
        return cin // groups * cout * k * k + (cout if bias else 0)

    def linear(i, o):
        return i * o + o

    def eab(w):
        n = linear(td, td) + linear(td, 4 * w)   # time modulation MLP
        n += 2 * w + 2 * w                       # two channel norms
        n += conv(w, 2 * w, 1)                   # lift
        n += sum(conv(2 * w, 2 * w, k, groups=2 * w) for k in (3, 5, 7))
        n += 3 * conv(w, w, 1)                   # one SCA per branch
        n += conv(3 * w, w, 1)                   # fuse
        n += conv(w, 2 * w, 1) + conv(w, w, 1)   # gated MLP
        return n

    widths = [c, 2 * c, 4 * c, 8 * c]
    total = conv(img, c, 3) + conv(c, img, 3)
    total += sum(m * eab(w) for m, w in zip(enc, widths))
    total += sum(conv(w, 2 * w, 2) for w in widths[:3])
    total += mid * eab(8 * c)
    total += sum(conv(w, 2 * w, 1, bias=False) for w in widths[1:])
    total += sum(m * eab(w) for m, w in zip(dec, widths))
    return total


def enumerate_condition(n_rcab, ch, scale, red, img=3):
    def conv(cin, cout, k):
        return cin * cout * k * k + cout

    rcab = 2 * conv(ch, ch, 3) + conv(ch, ch // red, 1) + conv(ch // red, ch, 1)
    cpem = conv(img + img * scale * scale, ch, 3) + n_rcab * rcab + conv(ch, img * scale * scale, 3)
    return cpem + conv(2 * img, img, 3)


def test_toy_parameter_count_matches_enumeration():
    net = EANet(TOY)
    assert count_parameters(net) == enumerate_parameters(16, [2, 1, 1, 1], [1, 1, 1, 1], 1, 256)
    model = EDiffSR(TOY, TOY_CPEM)
    expect = enumerate_parameters(16, [2, 1, 1, 1], [1, 1, 1, 1], 1, 256) + enumerate_condition(2, 32, 4, 16)
    assert count_parameters(model) == expect


def test_count_parameters_trivial():
    assert count_parameters(None) == 0
    assert count_parameters(torch.nn.Sequential()) == 0
    assert count_parameters(torch.nn.Conv2d(3, 8, 3)) == 224


def test_count_parameters_grouped_sums_to_total():
    model = EDiffSR(TOY, TOY_CPEM)
    groups = count_parameters(model, grouped=True)
    assert set(groups) == {"condition", "eanet"}
    assert sum(groups.values()) == count_parameters(model)


def test_default_config_parameter_pin():
    # measured once at first build; guards against silent architecture drift
    assert count_parameters(EANet(EanetConfig())) == 17_916_163
    assert count_parameters(EDiffSR(EanetConfig(), CpemConfig())) == 18_345_644


def test_output_shape_and_zero_init(gen):
    net = EANet(TOY)
    x = torch.randn(2, 3, 32, 32, generator=gen)
    out = net(x, torch.tensor([3, 70]))
    assert out.shape == (2, 3, 32, 32)
    assert torch.count_nonzero(out) == 0


def test_model_shape_contract(gen):
    model = EDiffSR(TOY, TOY_CPEM)
    v = torch.rand(1, 3, 16, 16, generator=gen)
    x = torch.rand(1, 3, 64, 64, generator=gen)
    assert model(x, x, v, 5).shape == (1, 3, 64, 64)


def _perturbed(cfg, gen):
    net = EANet(cfg).double()
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, EAB):
                m.ffn_out.weight.normal_(0, 0.3, generator=gen)
        net.head.weight.normal_(0, 0.3, generator=gen)
    return net


def test_output_depends_on_time(gen):
    net = _perturbed(TOY, gen)
    x = torch.randn(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    assert not torch.allclose(net(x, 1), net(x, 90))


def test_skip_connections_are_live(gen):
    net = _perturbed(TOY, gen)
    x = torch.randn(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    base = net(x, 10)
    # silence everything below the first scale: only the top skip can carry signal
    with torch.no_grad():
        nncore.zero_module(net.downs[0])
        for blocks in list(net.encoders[1:]) + [net.middle] + list(net.decoders[:-1]):
            for b in blocks:
                nncore.zero_module(b)
        for u in net.ups:
            nncore.zero_module(u)
    cut = net(x, 10)
    assert cut.abs().max() > 0
    assert not torch.allclose(base, cut)


def test_forward_is_deterministic(gen):
    net = _perturbed(TOY, gen)
    x = torch.randn(2, 3, 16, 16, generator=gen, dtype=torch.float64)
    assert torch.equal(net(x, torch.tensor([4, 9])), net(x, torch.tensor([4, 9])))


def test_rejects_bad_sizes():
    net = EANet(TOY)
    with pytest.raises(ValueError):
        net(torch.zeros(1, 3, 12, 16), 1)
    with pytest.raises(ValueError):
        EanetConfig(enc_counts=[1, 1, 1])
    with pytest.raises(ValueError):
        EanetConfig(base_channels=15)
    with pytest.raises(ValueError):
        EAB(8, 16)(torch.zeros(1, 4, 4, 4), torch.zeros(1, 16))


def test_eab_modulation_identity_when_mlp_zero(gen):
    blk = EAB(4, 8).double()
    nncore.zero_module(blk.mlp[2])
    a1, b1, a2, b2 = blk.modulation(torch.randn(2, 8, generator=gen, dtype=torch.float64))
    assert torch.equal(a1, torch.ones_like(a1)) and torch.equal(b2, torch.zeros_like(b2))


def test_grad_eab(gen):
    torch.manual_seed(0)
    blk = EAB(4, 8).double()
    with torch.no_grad():
        blk.ffn_out.weight.normal_(generator=gen)
    x = torch.randn(2, 4, 5, 5, generator=gen, dtype=torch.float64)
    temb = nncore.time_embedding([3, 40], 8, torch.float64)
    probe = torch.randn(2, 4, 5, 5, generator=gen, dtype=torch.float64)
    rep = nncore.module_grad_check(blk, lambda m: (m(x, temb) * probe).sum(), tolerance=1e-5, max_entries=10,
                                   generator=gen)
    assert rep.passed, rep.errors
    rep = nncore.grad_check(lambda x: (blk(x, temb) * probe).sum(), [x])
    assert rep.passed, rep.errors
