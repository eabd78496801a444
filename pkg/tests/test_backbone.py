import numpy as np
import pytest
import torch
import torch.nn as nn

from dadf.adapter import build_variant
from dadf.backbone import (
    BackboneConfig,
    Encoder,
    ShapeMismatchError,
    TaskHead,
    freeze_report,
    frozen_fingerprint,
    group_counts,
    load_backbone,
    save_backbone,
)
from dadf.model import DADF, ModelConfig


def make_encoder(cfg, variant="full"):
    return Encoder(cfg, [build_variant(variant, cfg.embed_dim) for _ in range(cfg.num_layers)])


@pytest.mark.parametrize("size,patch,grid", [(224, 14, 16), (64, 8, 8), (48, 8, 6)])
def test_patch_embed_grid(size, patch, grid):
    cfg = BackboneConfig(patch_size=patch, embed_dim=16, num_heads=2, base_grid=8)
    enc = make_encoder(cfg, "identity")
    tokens = enc.patch_embed(torch.rand(1, 3, size, size))
    assert tokens.shape == (1, grid, grid, 16)


def test_patch_embed_rejects_indivisible(toy_backbone):
    enc = make_encoder(toy_backbone)
    with pytest.raises(ShapeMismatchError):
        enc.patch_embed(torch.rand(1, 3, 65, 64))


def test_adapter_count_mismatch(toy_backbone):
    with pytest.raises(ValueError, match="adapters"):
        Encoder(toy_backbone, [build_variant("full", 64)])


def test_heads_divisibility():
    with pytest.raises(ValueError):
        BackboneConfig(embed_dim=30, num_heads=4)


def test_encode_shape_and_determinism(toy_backbone):
    enc = make_encoder(toy_backbone).eval()
    x = torch.rand(2, 3, 64, 64)
    a, b = enc(x), enc(x)
    assert a.shape == (2, 8, 8, 64)
    assert torch.equal(a, b)


@pytest.mark.parametrize("size", [8, 32, 64, 96])
def test_encode_grid_matches_patch_grid(toy_backbone, size):
    enc = make_encoder(toy_backbone).eval()
    assert enc(torch.rand(1, 3, size, size)).shape[1:3] == (size // 8, size // 8)


def test_identity_adapters_equal_plain_vit(toy_backbone):
    enc = make_encoder(toy_backbone, "identity")
    x = torch.rand(2, 3, 64, 64)
    z = enc.patch_embed(x)
    for block in enc.blocks:
        z = block(z)
    assert torch.equal(enc(x), enc.task_head(z))


def test_adapter_precedes_each_layer(toy_backbone):
    calls = []

    class Probe(nn.Module):
        def __init__(self, tag):
            super().__init__()
            self.tag = tag

        def forward(self, x):
            calls.append(self.tag)
            return x

    enc = Encoder(toy_backbone, [Probe("R1"), Probe("R2")])
    for i, block in enumerate(enc.blocks):
        block.register_forward_hook(lambda *a, i=i: calls.append(f"L{i + 1}"))
    enc(torch.rand(1, 3, 16, 16))
    assert calls == ["R1", "L1", "R2", "L2"]


def test_post_layer_switch():
    cfg = BackboneConfig(embed_dim=16, num_heads=2, adapter_position="post")
    calls = []

    class Probe(nn.Module):
        def forward(self, x):
            calls.append("R")
            return x

    enc = Encoder(cfg, [Probe(), Probe()])
    for block in enc.blocks:
        block.register_forward_hook(lambda *a: calls.append("L"))
    enc(torch.rand(1, 3, 16, 16))
    assert calls == ["L", "R", "L", "R"]


def test_same_seed_same_backbone(toy_backbone):
    torch.manual_seed(1)
    a = make_encoder(toy_backbone)
    torch.manual_seed(2)
    b = make_encoder(toy_backbone, "identity")
    assert frozen_fingerprint(a) == frozen_fingerprint(b)


class TestTaskHead:
    def test_zero_in_zero_out(self):
        head = TaskHead(4, 4)
        nn.init.zeros_(head.linear.bias)
        assert torch.equal(head(torch.zeros(1, 2, 2, 4)), torch.zeros(1, 2, 2, 4))

    def test_identity_weight(self):
        head = TaskHead(4, 4)
        with torch.no_grad():
            head.linear.weight.copy_(torch.eye(4))
            head.linear.bias.zero_()
        x = torch.randn(1, 2, 2, 4)
        assert torch.equal(head(x), x)

    def test_matches_loop_matmul(self):
        head = TaskHead(4, 3).double()
        x = torch.randn(1, 2, 2, 4, dtype=torch.float64)
        w = head.linear.weight.detach().numpy()
        b = head.linear.bias.detach().numpy()
        xs = x.numpy()
        expected = np.zeros((1, 2, 2, 3))
        for i in range(2):
            for j in range(2):
                for o in range(3):
                    expected[0, i, j, o] = b[o] + sum(w[o, c] * xs[0, i, j, c] for c in range(4))
        np.testing.assert_allclose(head(x).detach().numpy(), expected, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            TaskHead(2, 2)(torch.tensor([[[[float("nan"), 0.0]]]]))


def analytic_counts(c, mid, layers, patch, grid, mlp_ratio, task_dim, decoder, cls_hidden):
    """Hand-derived parameter counts from layer shapes."""
    hidden = int(c * mlp_ratio)
    patch_embed = 3 * patch * patch * c + c + grid * grid * c
    block = 2 * 2 * c + (c * 3 * c + 3 * c) + (c * c + c) + (c * hidden + hidden) + (hidden * c + c)
    frozen = patch_embed + layers * block

    def cbr(cin, cout, k):  # conv without bias + BN affine
        return cin * cout * k * k + 2 * cout

    branch = lambda k: cbr(c, mid, 1) + cbr(mid, mid, k) + cbr(mid, mid, 3)
    adapter = branch(1) + branch(3) + branch(5) + cbr(3 * mid, c, 1) + (c * c + c) + 1
    task_head = c * task_dim + task_dim
    rga = task_dim * task_dim + task_dim
    dec, prev = 0, task_dim
    for ch in decoder:
        dec += prev * ch * 9 + ch
        prev = ch
    dec += prev + 1
    cls = prev * cls_hidden + cls_hidden + cls_hidden + 1
    trainable = layers * adapter + task_head + rga + dec + cls
    return frozen, trainable


def test_freeze_report_matches_analytic_counts(toy_backbone):
    model = DADF(ModelConfig(backbone=toy_backbone))
    frozen, trainable = analytic_counts(64, 64, 2, 8, 8, 4.0, 64, (32, 16, 16), 32)
    report = freeze_report(model)
    assert (report.frozen, report.trainable) == (frozen, trainable)
    assert report.fraction == pytest.approx(trainable / (frozen + trainable), abs=0)


def test_freeze_groups(toy_backbone):
    counts = group_counts(DADF(ModelConfig(backbone=toy_backbone)))
    for group in ("encoder.patch_embed", "encoder.blocks"):
        assert counts[group][1] == 0 and counts[group][0] > 0
    for group in ("encoder.adapters", "encoder.task_head", "rga", "decoder", "cls"):
        assert counts[group][0] == 0 and counts[group][1] > 0


def test_all_frozen_fraction_zero(toy_backbone):
    model = DADF(ModelConfig(backbone=toy_backbone))
    for p in model.parameters():
        p.requires_grad_(False)
    assert freeze_report(model).fraction == 0


def test_backbone_checkpoint_round_trip(tmp_path, toy_backbone):
    torch.manual_seed(0)
    src = make_encoder(toy_backbone)
    with torch.no_grad():
        for p in src.blocks.parameters():
            p.add_(0.01)
    path = tmp_path / "backbone.npz"
    save_backbone(src, path)
    dst = make_encoder(toy_backbone)
    assert frozen_fingerprint(dst) != frozen_fingerprint(src)
    load_backbone(dst, path)
    assert frozen_fingerprint(dst) == frozen_fingerprint(src)
    with np.load(path) as data:
        assert all(data[k].ndim == 1 for k in data.files if k != "__meta__")


def test_backbone_checkpoint_shape_mismatch(tmp_path, toy_backbone):
    src = make_encoder(toy_backbone)
    save_backbone(src, tmp_path / "b.npz")
    other = make_encoder(BackboneConfig(embed_dim=32, num_heads=4))
    with pytest.raises(ShapeMismatchError):
        load_backbone(other, tmp_path / "b.npz")
