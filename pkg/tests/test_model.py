import numpy as np
import pytest

from metroflow import tensor as T
from metroflow.data import build_samples
from metroflow.errors import ConfigError, DimensionError
from metroflow.graph import build_graph
from metroflow.layers import ResidualBlock, residual_block_param_count
from metroflow.model import (
    VARIANTS,
    AttentionLSTM,
    ExogenousBranch,
    FlowBranch,
    ModelSpec,
    ResLSTM,
    attention,
    branch_param_counts,
    expected_param_count,
    fuse,
    make_variant,
)
from metroflow.tensor import Tensor, parameter

SMALL = dict(filters=(4, 8), exo_hidden=6, trunk_hidden=7)


def zero_parameters(module):
    for p in module.parameters().values():
        p.data[...] = 0.0


def test_residual_block_with_zero_convs_is_identity(rng):
    block = ResidualBlock(4, 4, rng)
    for conv in (block.conv1, block.conv2):
        conv.K.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 4, 5, 3)))
    assert np.array_equal(block(x).data, x.data)


def test_residual_block_shape_and_count(rng):
    block = ResidualBlock(3, 32, rng)
    assert block(Tensor(rng.normal(size=(2, 3, 6, 5)))).shape == (2, 32, 6, 5)
    assert block.num_parameters() == residual_block_param_count(3, 32)


def test_flow_branch_zero_input_zero_output(rng):
    spec = ModelSpec(stations=6, **SMALL)
    branch = FlowBranch(3, spec, rng)
    assert not branch(Tensor(np.zeros((2, 3, 6, 5)))).data.any()


def test_flow_branch_default_width_shape_and_determinism(rng):
    spec = ModelSpec(stations=276)
    branch = FlowBranch(3, spec, rng)
    x = Tensor(rng.uniform(size=(1, 3, 276, 5)))
    a, b = branch(x), branch(x)
    assert a.shape == (1, 5, 276)
    assert np.array_equal(a.data, b.data)


def test_flow_branch_rejects_wrong_channels(rng):
    branch = FlowBranch(3, ModelSpec(stations=4, **SMALL), rng)
    with pytest.raises(DimensionError):
        branch(Tensor(np.zeros((1, 2, 4, 5))))


def test_graph_branch_on_identity_laplacian_equals_flow_branch_on_realtime(small_dataset):
    ds = small_dataset
    isolated = build_graph([], [[s] for s in ds.graph.stations])
    samples = build_samples(ds.cube, ds.exo, isolated, ds.n, ds.scaler).subset(np.arange(4))
    model = ResLSTM(make_variant("full", isolated.n_stations, **SMALL))
    model.eval()
    branch = model.branches["graph"]
    via_graph = branch(model.branch_inputs(samples)["graph"])
    direct = branch(Tensor(samples.inflow[:, :1]))
    assert np.array_equal(via_graph.data, direct.data)


def test_exogenous_branch_zero_parameters(rng):
    spec = ModelSpec(stations=5, **SMALL)
    branch = ExogenousBranch(spec, rng)
    zero_parameters(branch)
    assert not branch(Tensor(rng.normal(size=(3, 11, 5)))).data.any()


def test_exogenous_branch_shapes(rng):
    out = ExogenousBranch(ModelSpec(stations=276), rng)(Tensor(rng.uniform(size=(1, 11, 5))))
    assert out.shape == (1, 5, 276)
    no_a = ExogenousBranch(make_variant("no_a", 5, **SMALL), rng)
    assert no_a(Tensor(rng.uniform(size=(2, 4, 5)))).shape == (2, 5, 5)
    with pytest.raises(DimensionError):
        no_a(Tensor(rng.uniform(size=(2, 11, 5))))


def test_attention_identity_and_half(rng):
    out = Tensor(rng.normal(size=(2, 5, 4)))
    trunk = AttentionLSTM(3, 4, 5, rng)
    trunk.score.W.data[...] = 0.0
    trunk.score.b.data[...] = 1e3
    weighted, coeff = attention(out, trunk.scale, trunk.shift, trunk.score)
    assert np.array_equal(coeff.data, np.ones_like(out.data))
    assert np.array_equal(weighted.data, out.data)
    trunk.score.b.data[...] = 0.0
    weighted, _ = attention(out, trunk.scale, trunk.shift, trunk.score)
    assert np.array_equal(weighted.data, 0.5 * out.data)


def test_attention_coefficients_in_open_unit_interval(rng):
    trunk = AttentionLSTM(3, 4, 5, rng)
    _, coeff = attention(Tensor(rng.normal(size=(8, 5, 4))), trunk.scale, trunk.shift, trunk.score)
    assert (coeff.data > 0).all() and (coeff.data < 1).all()


def test_fuse_identity_annihilator_and_single(rng):
    outs = [parameter(rng.normal(size=(2, 5, 3))) for _ in range(3)]
    ones = [Tensor(np.ones((5, 3))) for _ in range(3)]
    np.testing.assert_allclose(fuse(outs, ones).data, sum(o.data for o in outs))
    weights = [Tensor(np.ones((5, 3))), Tensor(np.zeros((5, 3))), Tensor(np.ones((5, 3)))]
    fused = fuse(outs, weights)
    np.testing.assert_allclose(fused.data, outs[0].data + outs[2].data)
    fused.sum().backward()
    assert not outs[1].grad.any()
    assert np.array_equal(fuse(outs[:1], ones[:1]).data, outs[0].data)
    with pytest.raises(DimensionError):
        fuse(outs, ones[:2])


def test_forward_full_scale_shape(rng, small_dataset):
    spec = make_variant("full", 276)
    model = ResLSTM(spec, rng)
    b = 2
    inputs = {
        "inflow": Tensor(rng.uniform(size=(b, 3, 276, 5))),
        "outflow": Tensor(rng.uniform(size=(b, 3, 276, 5))),
        "graph": Tensor(rng.uniform(size=(b, 1, 276, 5))),
        "exogenous": Tensor(rng.uniform(size=(b, 11, 5))),
    }
    assert model(inputs).shape == (2, 276)


def test_zero_network_outputs_final_bias(small_dataset):
    model = ResLSTM(make_variant("full", 5, **SMALL))
    zero_parameters(model)
    model.head.b.data[...] = np.arange(5.0)
    out = model(small_dataset.train.subset(np.arange(3)))
    assert np.array_equal(out.data, np.tile(np.arange(5.0), (3, 1)))


def test_variants_enable_expected_branches():
    assert make_variant("full", 4).branch_names() == ["inflow", "outflow", "graph", "exogenous"]
    assert make_variant("gcn_only", 4).branch_names() == ["graph"]
    assert "exogenous" not in make_variant("no_wa", 4).branch_names()
    assert "graph" not in make_variant("no_graph", 4).branch_names()
    assert make_variant("no_a", 4).n_indicators == 4
    tc = make_variant("two_channel", 4)
    assert tc.branch_names() == ["realtime", "daily", "weekly", "graph", "exogenous"]
    model = ResLSTM(make_variant("two_channel", 4, **SMALL))
    assert all(model.branches[p].channels == 2 for p in ("realtime", "daily", "weekly"))
    with pytest.raises(ConfigError):
        make_variant("no_such_variant", 4)


@pytest.mark.parametrize("variant", VARIANTS)
def test_parameter_count_matches_formula(variant):
    spec = make_variant(variant, 6, **SMALL)
    assert ResLSTM(spec).num_parameters() == expected_param_count(spec)


def test_dropping_a_branch_removes_exactly_its_parameters():
    full = make_variant("full", 6, **SMALL)
    counts = branch_param_counts(full)
    n_full = ResLSTM(full).num_parameters()
    assert n_full - ResLSTM(make_variant("no_wa", 6, **SMALL)).num_parameters() == counts["exogenous"]
    assert n_full - ResLSTM(make_variant("no_graph", 6, **SMALL)).num_parameters() == counts["graph"]


def test_spec_round_trip_and_validation():
    spec = make_variant("no_a", 9, seed=3, **SMALL)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        ModelSpec(stations=4, inflow=False, outflow=False, graph=False, exogenous=False)


def test_model_is_deterministic_per_seed(small_dataset):
    batch = small_dataset.train.subset(np.arange(4))
    a = ResLSTM(make_variant("full", 5, seed=7, **SMALL))
    b = ResLSTM(make_variant("full", 5, seed=7, **SMALL))
    a.eval(), b.eval()
    with T.no_grad():
        assert np.array_equal(a(batch).data, b(batch).data)
