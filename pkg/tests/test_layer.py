import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgc import ops
from cgc.layer import (ABLATIONS, CgcConfig, ablation_config, cgc_forward, cgc_seq_forward, compute_gate,
                       decode_gate, default_groups, default_latent, encode_context, first_layer_interact,
                       init_params, interact_channels, modulate_kernel)
from cgc.ops import logit
from cgc.tensor import Tensor

from oracles import block_diagonal, conv2d_loops


def rng(seed=0):
    return np.random.default_rng(seed)


def live(params, seed=0):
    """Random non-zero norm affines so the gate actually depends on the input."""
    r = rng(seed)
    for _, norm in params.norms():
        norm.gamma.data = 1.0 + 0.5 * r.standard_normal(norm.size)
        norm.beta.data = 0.5 * r.standard_normal(norm.size)
    return params


# -- configuration -----------------------------------------------------------

def test_latent_width_rounds_half_up():
    assert default_latent(9) == 5
    assert default_latent(49) == 25
    assert default_latent(2) == 1


@pytest.mark.parametrize("c,o,g", [(64, 64, 4), (16, 32, 1), (3, 64, 1), (32, 24, 1), (48, 16, 1)])
def test_group_rule(c, o, g):
    assert default_groups(c, o) == g


def test_one_by_one_kernel_rejected():
    with pytest.raises(ValueError, match="1x1"):
        CgcConfig(c=8, o=8, kernel=1)


def test_divisibility_enforced():
    with pytest.raises(ValueError, match="divisible"):
        CgcConfig(c=6, o=8, kernel=3, g=4)


@pytest.mark.parametrize("c,o,shape", [(3, 64, (3, 64)), (16, 32, (16, 32)), (64, 64, (16, 16))])
def test_interaction_weight_shapes(c, o, shape):
    params = first_layer_interact(CgcConfig(c=c, o=o, kernel=3))
    assert params.I.shape == shape


def test_ablation_switches():
    assert ablation_config("d-full", c=16, o=16, kernel=3).d == 9
    assert ablation_config("pool-2x", c=16, o=16, kernel=3).pooled == (6, 6)
    assert ablation_config("g1-full", c=64, o=64, kernel=3).g == 1
    p = init_params(ablation_config("shared-d", c=16, o=16, kernel=3))
    assert p.D_o is p.D_c
    p = init_params(ablation_config("shared-norm", c=16, o=16, kernel=3))
    assert p.norm_c2 is p.norm_c1
    p = init_params(ablation_config("two-e", c=16, o=16, kernel=3))
    assert p.E2 is not None and p.E2.shape == p.E.shape
    with pytest.raises(ValueError):
        ablation_config("no-such-row", c=16, o=16, kernel=3)


def test_linear_maps_have_no_bias():
    p = init_params(CgcConfig(c=16, o=16, kernel=3))
    names = {n for n, _ in p.named_tensors()}
    assert not any("bias" in n or n.endswith(".b") for n in names)


# -- encode_context ----------------------------------------------------------

def test_constant_input_encodes_to_zero():
    cfg = CgcConfig(c=4, o=4, kernel=3)
    p = init_params(cfg, zero_gate=False)
    p.E.data[:] = 0.3  # equal column sums make the projected constant constant along d too
    C_dec, C_int = encode_context(np.full((3, 4, 6, 6), 1.7), cfg, p, "train")
    assert np.all(C_dec.data == 0) and np.all(C_int.data == 0)


def test_constant_input_gives_one_shared_row():
    # norms reduce over (batch, d), so a generic E leaves a d-profile; it is the same everywhere
    cfg = CgcConfig(c=4, o=4, kernel=3)
    p = init_params(cfg, zero_gate=False)
    C_dec, _ = encode_context(np.full((3, 4, 6, 6), 1.7), cfg, p, "train")
    np.testing.assert_allclose(C_dec.data, np.broadcast_to(C_dec.data[:1, :1], C_dec.shape), atol=1e-12)


def test_context_shape():
    cfg = CgcConfig(c=64, o=64, kernel=(3, 3), d=4)
    C_dec, C_int = encode_context(rng().standard_normal((2, 64, 8, 8)), cfg, init_params(cfg))
    assert C_dec.shape == (2, 64, 4) and C_int.shape == (2, 64, 4)


def test_context_channel_permutation_equivariance():
    cfg = CgcConfig(c=4, o=4, kernel=3)
    p = live(init_params(cfg, zero_gate=False))
    for _, n in p.norms():  # per-channel affines would break the symmetry; make them uniform
        n.gamma.data[:] = 1.3
        n.beta.data[:] = 0.1
    x = rng().standard_normal((3, 4, 6, 6))
    perm = np.array([2, 0, 3, 1])
    a, b = encode_context(x, cfg, p, "train")
    pa, pb = encode_context(x[:, perm], cfg, p, "train")
    np.testing.assert_allclose(pa.data, a.data[:, perm], atol=1e-12)
    np.testing.assert_allclose(pb.data, b.data[:, perm], atol=1e-12)


# -- interact_channels -------------------------------------------------------

def test_interaction_identity():
    cfg = CgcConfig(c=16, o=16, kernel=3, g=1)
    p = init_params(cfg, zero_gate=False)
    p.I.data = np.eye(16)
    p.norm_o.gamma.data[:] = 1.0
    p.norm_o.beta.data[:] = 0.0
    p.norm_o.eps = 1e-300
    C = rng().standard_normal((2, 16, 5))
    O = interact_channels(C, cfg, p, "eval")
    np.testing.assert_allclose(O.data, np.maximum(C, 0), atol=1e-12)


def test_interaction_shape():
    cfg = CgcConfig(c=32, o=64, kernel=3, g=2)
    O = interact_channels(rng().standard_normal((3, 32, 5)), cfg, init_params(cfg), "train")
    assert O.shape == (3, 64, 5)


def test_interaction_block_diagonal_oracle():
    cfg = CgcConfig(c=8, o=12, kernel=3, g=4)
    p = live(init_params(cfg, zero_gate=False))
    C = rng(3).standard_normal((2, 8, 5))
    dense = block_diagonal(p.I.data, 4)
    pre = np.stack([C[:, :, j] @ dense for j in range(5)], axis=-1)
    norm = p.norm_o
    expect = np.maximum((pre - norm.running.mean[None, :, None]) / np.sqrt(norm.running.var[None, :, None] + norm.eps)
                        * norm.gamma.data[None, :, None] + norm.beta.data[None, :, None], 0)
    np.testing.assert_allclose(interact_channels(C, cfg, p, "eval").data, expect, atol=1e-12)


def test_interaction_requires_module():
    cfg = CgcConfig(c=4, o=4, kernel=3, combine="only_g1", channel_interacting=False)
    with pytest.raises(ValueError):
        interact_channels(rng().standard_normal((1, 4, 5)), cfg, init_params(cfg))


# -- decode_gate -------------------------------------------------------------

@pytest.mark.parametrize("combine,value", [("sum_sigmoid", 0.5), ("product", 0.25), ("only_g1", 0.5),
                                           ("only_g2", 0.5)])
def test_zero_latents_give_constant_gate(combine, value):
    cfg = CgcConfig(c=4, o=6, kernel=3, combine=combine, g=2)
    G = decode_gate(np.zeros((2, 4, 5)), np.zeros((2, 6, 5)), cfg, init_params(cfg))
    assert G.shape == (2, 6, 4, 3, 3)
    assert np.all(G.data == value)


def test_only_g1_independent_of_output_channel():
    cfg = CgcConfig(c=4, o=6, kernel=3, combine="only_g1", g=2)
    G = decode_gate(rng().standard_normal((2, 4, 5)), None, cfg, init_params(cfg)).data
    assert np.all(G == G[:, :1])


def test_sum_sigmoid_additive_structure():
    cfg = CgcConfig(c=4, o=6, kernel=3, g=2)
    G = decode_gate(rng().standard_normal((2, 4, 5)), rng(1).standard_normal((2, 6, 5)), cfg,
                    init_params(cfg)).data
    P = logit(G)
    d = P[:, 1:] - P[:, :1]  # difference across output channels
    np.testing.assert_allclose(d, np.broadcast_to(d[:, :, :1], d.shape), atol=1e-9)


# -- modulate_kernel ---------------------------------------------------------

def test_modulation_cases():
    W = rng().standard_normal((3, 2, 3, 3))
    np.testing.assert_array_equal(modulate_kernel(W, np.ones_like(W)).data, W)
    np.testing.assert_array_equal(modulate_kernel(W, np.full_like(W, 0.5)).data, 0.5 * W)
    G = rng(1).random(W.shape)
    out = modulate_kernel(W, G).data
    for idx in np.ndindex(W.shape):
        assert out[idx] == W[idx] * G[idx]
    with pytest.raises(ValueError):
        modulate_kernel(W, np.ones((3, 2, 3, 2)))


# -- cgc_forward -------------------------------------------------------------

@pytest.mark.parametrize("variant", sorted(ABLATIONS))
def test_zero_init_gives_half_conv(variant):
    cfg = ablation_config(variant, c=8, o=8, kernel=3, padding=1, g=2 if variant != "g1-full" else None)
    p = init_params(cfg, 1)
    x = rng().standard_normal((2, 8, 7, 7))
    y = cgc_forward(x, cfg, p, "train").data
    expect = 0.25 if variant == "product" else 0.5
    assert np.array_equal(y, ops.conv_nd(x, expect * p.W.data, padding=1).data)
    if variant != "product":
        np.testing.assert_allclose(y, 0.5 * conv2d_loops(x, p.W.data, 1, 1), atol=1e-12)


def test_samples_gated_independently():
    cfg = CgcConfig(c=4, o=4, kernel=3, padding=1, g=2)
    p = live(init_params(cfg, 2, zero_gate=False))
    for _, n in p.norms():
        n.running.mean = rng(4).standard_normal(n.size) * 0.1
    x = rng().standard_normal((2, 4, 6, 6))
    same = np.stack([x[0], x[0]])
    y = cgc_forward(same, cfg, p, "eval").data
    np.testing.assert_array_equal(y[0], y[1])
    other = np.stack([x[0], rng(9).standard_normal((4, 6, 6))])
    np.testing.assert_array_equal(cgc_forward(other, cfg, p, "eval").data[0], y[0])


def test_gradients_reach_kernel_and_gate_path():
    cfg = CgcConfig(c=4, o=4, kernel=3, padding=1, g=2)
    p = live(init_params(cfg, zero_gate=False))
    cgc_forward(rng().standard_normal((2, 4, 6, 6)), cfg, p).sum().backward()
    for name, t in p.named_tensors():
        assert t.grad is not None and np.any(t.grad != 0), name


def test_frozen_gate_matches_zero_init():
    cfg = CgcConfig(c=4, o=4, kernel=3, padding=1, g=2)
    p = init_params(cfg)
    x = rng().standard_normal((2, 4, 6, 6))
    assert np.array_equal(cgc_forward(x, cfg, p).data, cgc_forward(x, cfg, p, frozen_gate=True).data)


def test_conv1d_variant_runs():
    cfg = CgcConfig(c=4, o=8, kernel=(3,), variant="conv1d", padding=1, g=2)
    p = live(init_params(cfg, zero_gate=False))
    y, k = cgc_forward(rng().standard_normal((2, 4, 9)), cfg, p, return_kernel=True)
    assert y.shape == (2, 8, 9) and k.shape == (2, 8, 4, 3)


# -- gate properties ---------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), variant=st.sampled_from(sorted(ABLATIONS)),
       c=st.sampled_from([2, 4, 8]), k=st.sampled_from([2, 3, (2, 3)]))
def test_gate_range_and_shape(seed, variant, c, k):
    cfg = ablation_config(variant, c=c, o=2 * c, kernel=k, g=1)
    p = live(init_params(cfg, seed, zero_gate=False), seed)
    G = compute_gate(rng(seed).standard_normal((2, c, 7, 6)) * 3, cfg, p, "train").data
    assert G.shape == (2,) + p.W.shape
    assert np.all(G > 0) and np.all(G < 1)


def test_gate_depends_only_on_pooled_summary():
    cfg = CgcConfig(c=4, o=4, kernel=3, g=2)
    p = live(init_params(cfg, zero_gate=False))
    x = rng().standard_normal((2, 4, 6, 6))
    # adding a zero-mean pattern inside every 2x2 pooling window keeps the summary
    bump = np.tile(np.array([[1.0, -1.0], [-1.0, 1.0]]), (3, 3)) * rng(1).standard_normal((2, 4, 1, 1))
    y = x + bump
    np.testing.assert_allclose(ops.adaptive_pool(y, (3, 3)).data, ops.adaptive_pool(x, (3, 3)).data, atol=1e-14)
    np.testing.assert_allclose(compute_gate(y, cfg, p, "eval").data, compute_gate(x, cfg, p, "eval").data,
                               atol=1e-14)


# -- sequence variant --------------------------------------------------------

def seq_cfg(**kw):
    return CgcConfig(c=16, o=16, kernel=(7,), variant="sequence", heads=8, **kw)


def test_sequence_zero_init_halves_kernel():
    cfg = seq_cfg()
    p = init_params(cfg)
    S = rng().standard_normal((3, 16, 30))
    y, gate = cgc_seq_forward(S, p.W, cfg, p, return_gate=True)
    assert gate.shape == (3, 8, 7)
    assert np.all(gate.data == 0.5)
    kern = np.repeat(0.5 * p.W.data, 2, axis=0)[:, None, :]
    expect = ops.conv_nd(S, kern, padding=3, groups=16).data
    np.testing.assert_allclose(y.data, expect, atol=1e-12)


def test_sequence_short_input_is_zero_padded():
    cfg = CgcConfig(c=4, o=4, kernel=(3,), variant="sequence", heads=2)
    p = live(init_params(cfg, zero_gate=False))
    S = rng().standard_normal((2, 4, 3))
    _, gate = cgc_seq_forward(S, p.W, cfg, p, return_gate=True)
    padded = np.concatenate([S, np.zeros((2, 4, 6))], axis=2)
    _, gate_padded = cgc_seq_forward(padded, p.W, cfg, p, return_gate=True)
    np.testing.assert_array_equal(gate.data, gate_padded.data)


def test_sequence_errors():
    with pytest.raises(ValueError):
        CgcConfig(c=16, o=16, kernel=(6,), variant="sequence", heads=8)
    with pytest.raises(ValueError):
        CgcConfig(c=12, o=12, kernel=(3,), variant="sequence", heads=8)
    cfg = seq_cfg()
    p = init_params(cfg)
    with pytest.raises(ValueError, match="empty"):
        cgc_seq_forward(np.zeros((1, 16, 0)), p.W, cfg, p)


def test_sequence_has_no_channel_interaction():
    cfg = seq_cfg()
    p = init_params(cfg)
    assert not cfg.channel_interacting and p.I is None and p.D_o is None
    assert {n for n, _ in p.named_tensors()} == {"W", "E", "D_c", "norm_c1.gamma", "norm_c1.beta"}


def test_params_tagged_for_learning_rate():
    p = init_params(CgcConfig(c=16, o=16, kernel=3))
    tags = {n: t.tag for n, t in p.named_tensors()}
    assert tags.pop("W") == "base"
    assert set(tags.values()) == {"cgc"}


def test_float32_forward():
    cfg = CgcConfig(c=4, o=4, kernel=3, padding=1, g=2)
    p = init_params(cfg, dtype=np.float32)
    y = cgc_forward(rng().standard_normal((2, 4, 6, 6)).astype(np.float32), cfg, p)
    assert y.dtype == np.float32


def test_rebind_keeps_aliases():
    p = init_params(ablation_config("shared-d", c=4, o=4, kernel=3))
    new = p.rebind({"D_c": Tensor(np.zeros_like(p.D_c.data))})
    assert new.D_o is new.D_c and np.all(new.D_c.data == 0)
    q = init_params(ablation_config("shared-norm", c=4, o=4, kernel=3))
    r = q.rebind({})
    assert r.norm_c2 is r.norm_c1
