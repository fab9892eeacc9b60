import numpy as np
import pytest

from sas_petl import tensor as T
from sas_petl.backbone import (Backbone, BackboneConfig, Head, backbone_forward, freeze_all, patch_embed,
                               patchify, unfreeze_all)
from sas_petl.errors import ConfigError, DimensionError
from sas_petl.tensor import Rng, Tensor

from conftest import SMALL


def test_patch_embed_shape_default_config():
    bb = Backbone(BackboneConfig(), Rng(0))
    tokens = patch_embed(np.zeros((1, 16, 16), dtype=np.float32), bb)
    assert tokens.shape == (17, 32)


def test_patch_embed_zero_image_is_bias_plus_position():
    bb = Backbone(BackboneConfig(), Rng(0))
    bb.patch_embed_b.data = Rng(5).normal((32,)).astype(np.float32)
    tokens = patch_embed(np.zeros((1, 16, 16), dtype=np.float32), bb).data
    np.testing.assert_allclose(tokens[0], bb.cls_token.data[0] + bb.pos_embed.data[0], rtol=1e-6)
    np.testing.assert_allclose(tokens[1:], bb.patch_embed_b.data + bb.pos_embed.data[1:], rtol=1e-6)


def test_patch_embed_rejects_wrong_image_size():
    bb = Backbone(BackboneConfig(), Rng(0))
    with pytest.raises(DimensionError):
        patch_embed(np.zeros((1, 15, 16), dtype=np.float32), bb)


def test_patch_embed_batch_matches_single(small_backbone, small_images):
    batch = patch_embed(small_images, small_backbone).data
    for i in range(len(small_images)):
        np.testing.assert_array_equal(patch_embed(small_images[i], small_backbone).data, batch[i])


def test_patchify_row_major():
    cfg = BackboneConfig(image_side=4, channels=1, patch=2, d=4, L=1, heads=1)
    img = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    p = patchify(img, cfg)
    np.testing.assert_array_equal(p[0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(p[0, 1], [2, 3, 6, 7])
    np.testing.assert_array_equal(p[0, 3], [10, 11, 14, 15])


def test_forward_shape_and_intermediates(small_backbone, small_images):
    feats, inter = backbone_forward(patch_embed(small_images, small_backbone), small_backbone)
    assert feats.shape == (4, 16)
    assert len(inter) == SMALL.L
    assert all(z.shape == (4, SMALL.num_tokens, 16) for z in inter)


def test_zero_hook_is_identity(small_backbone, small_images):
    tokens = patch_embed(small_images, small_backbone)
    plain, _ = backbone_forward(tokens, small_backbone)
    zero, _ = backbone_forward(tokens, small_backbone, hook=lambda z, i: T.Tensor(np.zeros(z.shape, np.float32)))
    np.testing.assert_array_equal(plain.data, zero.data)


def test_hook_sees_every_layer_in_order(small_backbone, small_images):
    seen = []
    backbone_forward(patch_embed(small_images, small_backbone), small_backbone,
                     hook=lambda z, i: seen.append(i))
    assert seen == list(range(SMALL.L))


def test_hook_shape_mismatch(small_backbone, small_images):
    with pytest.raises(DimensionError):
        backbone_forward(patch_embed(small_images, small_backbone), small_backbone,
                         hook=lambda z, i: Tensor(np.zeros((1, 1, 3), np.float32)))


def test_hook_changes_downstream_intermediates(small_backbone, small_images):
    tokens = patch_embed(small_images, small_backbone)
    _, a = backbone_forward(tokens, small_backbone)

    def bump(z, i):
        return Tensor(np.full(z.shape, 0.5, np.float32)) if i == 0 else None

    _, b = backbone_forward(tokens, small_backbone, hook=bump)
    np.testing.assert_array_equal(a[0].data, b[0].data)  # inputs reported before adjustment
    assert not np.allclose(a[1].data, b[1].data)


def test_single_layer_backbone():
    bb = Backbone(BackboneConfig(image_side=8, patch=4, d=8, L=1, heads=2), Rng(0))
    feats, inter = backbone_forward(patch_embed(np.zeros((1, 8, 8), np.float32), bb), bb)
    assert feats.shape == (8,) and len(inter) == 1


def test_attention_rows_sum_to_one(small_backbone, small_images):
    tokens = patch_embed(small_images, small_backbone)
    _, w = small_backbone.blocks[0].attention(tokens, return_weights=True)
    assert w.shape == (4, SMALL.heads, SMALL.num_tokens, SMALL.num_tokens)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, rtol=1e-5)
    assert np.all(w.data >= 0)


def test_final_features_are_layer_normed(small_backbone, small_images):
    f = small_backbone(small_images).data.astype(np.float64)
    np.testing.assert_allclose(f.mean(-1), 0, atol=1e-5)
    # the normalised variance is var/(var + eps); residual activations are small at init
    v = f.var(-1)
    assert np.all(v <= 1 + 1e-5) and np.all(v > 0.95)


def test_freeze_contract(small_backbone, small_images):
    assert small_backbone.frozen
    assert small_backbone.trainable_parameters() == []
    before = small_backbone.checksum()
    head = Head(SMALL.d, 3)
    head.weight.data = Rng(3).normal(head.weight.shape).astype(np.float32)
    loss = T.softmax_cross_entropy(head(small_backbone(small_images)), np.array([0, 1, 2, 0]))
    T.backward(loss)
    assert all(p.grad is None for p in small_backbone.parameters())
    assert head.weight.grad is not None
    assert small_backbone.checksum() == before


def test_unfrozen_gradients_reach_every_parameter(small_images):
    bb = Backbone(SMALL, Rng(0))
    head = Head(SMALL.d, 3)
    head.weight.data = Rng(3).normal(head.weight.shape).astype(np.float32)
    loss = T.softmax_cross_entropy(head(bb(small_images)), np.array([0, 1, 2, 0]))
    T.backward(loss)
    for name, p in bb.named_parameters():
        assert p.grad is not None and np.any(p.grad), name
    freeze_all(bb)
    unfreeze_all(bb)
    assert not bb.frozen and len(bb.trainable_parameters()) == len(bb.parameters())


def test_backbone_gradcheck_small():
    cfg = BackboneConfig(image_side=4, channels=1, patch=2, d=4, L=1, heads=2, mlp_ratio=1)
    bb = Backbone(cfg, Rng(0))
    imgs = Rng(1).normal((2, 1, 4, 4))
    w = Rng(2).normal((2, 4))
    params = [p for _, p in bb.named_parameters()]
    assert T.finite_diff_check(lambda *_: (bb(imgs) * w).sum(), params) < 1e-4


def test_checksum_changes_with_weights():
    bb = Backbone(SMALL, Rng(0))
    c = bb.checksum()
    assert Backbone(SMALL, Rng(0)).checksum() == c
    bb.blocks[1].fc1.weight.data[0, 0] += 1e-3
    assert bb.checksum() != c


@pytest.mark.parametrize("kw", [dict(image_side=10, patch=4), dict(d=30, heads=4), dict(L=0), dict(channels=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        BackboneConfig(**kw)
