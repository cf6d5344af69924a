import numpy as np
import pytest

from dinat_ir.errors import ConfigError, DimensionError
from dinat_ir.model import (ABLATION_VARIANTS, GDFN, Downsample, ModelConfig, StageSpec, TransformerBlock,
                            Upsample, build_model, dilation_schedule, gdfn_hidden, param_count)
from dinat_ir.tensor import Tensor
from dinat_ir.verify import block_suite, model_check


def _zero(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def test_dilation_schedule():
    assert dilation_schedule(StageSpec(4, 8, 1, (1, 9)), "alternating") == [1, 9, 1, 9]
    assert dilation_schedule(StageSpec(3, 8, 1, (1, 9)), "na_only") == [1, 1, 1]
    assert dilation_schedule(StageSpec(2, 8, 1, (1, 36)), "dina_only") == [36, 36]


def test_gdfn_hidden_rounding():
    assert gdfn_hidden(48, 2.66) == 128
    assert gdfn_hidden(50, 2.66) == 133


def test_gdfn_shape_and_zero_weights(rng):
    g = GDFN(16, 2.66, rng, np.float64)
    x = Tensor(rng.standard_normal((1, 16, 8, 8)))
    assert g(x).shape == (1, 16, 8, 8)
    _zero(g)
    assert not g(x).data.any()


def test_block_residual_identity(rng):
    blk = TransformerBlock(4, 2, 2, ModelConfig.micro(base=4), rng, np.float64)
    for name, p in blk.named_parameters():
        if "norm" not in name:
            p.data = np.zeros_like(p.data)
    x = rng.standard_normal((1, 4, 8, 8))
    np.testing.assert_array_equal(blk(Tensor(x)).data, x)


def test_down_up_shapes(rng):
    x = Tensor(rng.standard_normal((1, 8, 16, 16)))
    d = Downsample(8, rng, np.float64)(x)
    assert d.shape == (1, 16, 8, 8)
    assert Upsample(16, rng, np.float64)(d).shape == x.shape


def test_block_level_grad_suite():
    failures = {k: r.max_rel_err for k, r in block_suite(0).items() if not r.passed}
    assert not failures


def test_micro_model_grad_check():
    assert model_check(seed=0).passed


# whole network --------------------------------------------------------------

@pytest.mark.parametrize("hw", [(16, 16), (24, 32), (64, 64)])
def test_forward_shape(hw):
    m = build_model(ModelConfig.micro(), seed=0)
    x = Tensor(np.random.default_rng(0).random((1, 3) + hw).astype(np.float32))
    assert m(x).shape == x.shape


def test_rejects_bad_spatial_extent():
    m = build_model(ModelConfig.micro(), seed=0)
    with pytest.raises(DimensionError):
        m(Tensor(np.zeros((1, 3, 12, 16), dtype=np.float32)))


def test_zero_output_conv_is_identity(rng):
    m = build_model(ModelConfig.micro(), seed=3)
    m.output.weight.data[:] = 0
    x = rng.random((2, 3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(m(Tensor(x)).data, x)


def test_dual_input_residual_is_view_average(rng):
    m = build_model(ModelConfig.micro(in_channels=6), seed=0)
    m.output.weight.data[:] = 0
    x = rng.random((1, 6, 16, 16)).astype(np.float32)
    np.testing.assert_allclose(m(Tensor(x)).data, 0.5 * (x[:, :3] + x[:, 3:]), atol=1e-7)


def test_same_seed_same_forward(rng):
    x = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
    a = build_model(ModelConfig.micro(), seed=5)
    b = build_model(ModelConfig.micro(), seed=5)
    np.testing.assert_array_equal(a(x).data, b(x).data)


def test_parameter_names_unique():
    names = [n for n, _ in build_model(ModelConfig.micro()).named_parameters()]
    assert len(names) == len(set(names))
    assert "enc1.blocks.0.attn.attn.wq" in names


# parameter counting -----------------------------------------------------------

def test_param_count_hand_computed():
    # base 2, one block per stage, k=1, single head, one refinement block
    cfg = ModelConfig.make(2, blocks=(1, 1, 1, 1), heads=(1, 1, 1, 1), k=1, refinement_blocks=1)
    assert param_count(cfg) == 14938
    assert build_model(cfg).num_parameters() == 14938


@pytest.mark.parametrize("cfg", [ModelConfig.micro(), ModelConfig.micro(cam_enabled=False),
                                 ModelConfig.micro(in_channels=6), ModelConfig.ablation()])
def test_param_count_matches_built_model(cfg):
    assert param_count(cfg) == build_model(cfg).num_parameters()


def test_reference_sizes():
    assert param_count(ModelConfig.full()) == 25_972_720
    assert param_count(ModelConfig.ablation()) == 2_999_848
    assert abs(param_count(ModelConfig.full()) / 25.90e6 - 1) < 0.15
    assert abs(param_count(ModelConfig.ablation()) / 3.0e6 - 1) < 0.15


def test_param_count_independent_of_mode_and_seed():
    base = ModelConfig.micro()
    n = param_count(base)
    for mode, cam_on in ABLATION_VARIANTS.values():
        if cam_on:
            assert param_count(base.with_mode(mode, True)) == n
    assert build_model(base, seed=1).num_parameters() == build_model(base, seed=2).num_parameters()
    blocks = 2 * sum(s.blocks for s in base.stages[:3]) + base.stages[3].blocks + base.refinement_blocks
    assert n - param_count(base.with_mode("alternating", False)) == 3 * blocks


def test_config_errors():
    with pytest.raises(ConfigError):
        ModelConfig.micro(k=4)
    with pytest.raises(ConfigError):
        ModelConfig.make(3)
    with pytest.raises(ConfigError):
        ModelConfig.micro(attention_mode="global")
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"base_channels": 8, "bogus": 1})


def test_config_dict_roundtrip():
    cfg = ModelConfig.ablation(attention_mode="dina_only")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
