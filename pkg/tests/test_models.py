import time

import numpy as np
import pytest

from coordgate_lab import ConfigError, ContractError, ModelSpec, Tensor, build_model, count_params, no_grad
from coordgate_lab.gradcheck import grad_check
from coordgate_lab.layers import CoordGate
from coordgate_lab.models import export_gating_map
from coordgate_lab.tensor import mse_loss

SPECS_1D = [
    {"kind": "cnn", "L": 1, "k": 7, "c": 1},
    {"kind": "cnn", "L": 4, "k": 7, "c": 4},
    {"kind": "ccnn", "L": 4, "k": 7, "c": 4},
    {"kind": "cg", "L": 1, "k": 7, "c": 3, "p": 2},
    {"kind": "cg", "L": 2, "k": 5, "c": 3, "p": 3, "coords": "random"},
    {"kind": "cg", "L": 1, "k": 3, "c": 2, "p": 1, "coords": "direct", "extent": [12]},
]
SPECS_2D = [
    {"kind": "cnn", "L": 2, "k": 3, "c": 3, "dims": 2},
    {"kind": "ccnn", "L": 2, "k": 3, "c": 3, "dims": 2},
    {"kind": "cg", "L": 2, "k": 3, "c": 4, "p": 2, "dims": 2},
    {"kind": "lcn", "k": 3, "dims": 2, "extent": [8, 8]},
    {"kind": "unet", "depth": 2, "dims": 2, "base_channels": 4},
    {"kind": "unet", "depth": 2, "dims": 2, "base_channels": 4, "gate_placement": "resample", "p": 2},
    {"kind": "unet", "depth": 2, "dims": 2, "base_channels": 4, "gate_placement": "input"},
    {"kind": "unet", "depth": 1, "dims": 2, "base_channels": 2, "gate_placement": "resample",
     "coords": "direct", "extent": [8, 8]},
]


@pytest.mark.parametrize("d", SPECS_1D + SPECS_2D, ids=lambda d: ModelSpec.from_dict(dict(d)).name)
def test_param_count_matches_built_model(d):
    spec = ModelSpec.from_dict(dict(d))
    assert build_model(spec, 0).num_params() == count_params(spec)


def test_param_count_examples():
    assert count_params(ModelSpec("cnn", L=1, k=7, c=1)) == 7 + 1
    # conv 1->3, encoder 1->3->3 (1D coordinates have one channel), 1x1 projection 3->1
    cg = ModelSpec("cg", L=1, k=7, c=3, p=2)
    assert count_params(cg) == (7 * 1 * 3 + 3) + (1 * 3 + 3) + (3 * 3 + 3) + (3 + 1) == 46
    counts = [count_params(ModelSpec("unet", dims=2, depth=d)) for d in range(1, 6)]
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_cg_unet2_smaller_than_unet3():
    assert (count_params(ModelSpec("unet", dims=2, depth=2, gate_placement="resample", p=2))
            < count_params(ModelSpec("unet", dims=2, depth=3)))


def test_spec_json_round_trip_and_validation():
    s = ModelSpec.from_dict({"kind": "unet", "dims": 2, "depth": 3, "gate_placement": "resample", "p": 2})
    assert ModelSpec.from_json(s.to_json()) == s
    assert s.name == "CG U-Net(3)"
    assert ModelSpec("unet", dims=2, depth=4, gate_placement="input").name == "CoordConv-UNet(4)"
    for bad in [{"kind": "rnn"}, {"kind": "cnn", "k": 4}, {"kind": "cnn", "bogus": 1},
                {"kind": "cg", "coords": "direct"}, {"kind": "unet", "dims": 2, "depth": 3, "extent": [12, 16]}]:
        with pytest.raises(ConfigError):
            ModelSpec.from_dict(bad)


def test_unet_rejects_indivisible_input():
    m = build_model(ModelSpec("unet", dims=2, depth=2, base_channels=2), 0)
    with pytest.raises(ConfigError):
        m(Tensor(np.zeros((1, 6, 8, 1))))


def _forward_shapes(d):
    spec = ModelSpec.from_dict(dict(d))
    m = build_model(spec, 1)
    shape = (2, 12, 1) if spec.dims == 1 else (2, 8, 8, 1)
    with no_grad():
        y = m(Tensor(np.random.default_rng(2).uniform(size=shape)))
    return shape, y.shape


@pytest.mark.parametrize("d", SPECS_1D + SPECS_2D, ids=lambda d: ModelSpec.from_dict(dict(d)).name)
def test_output_shape_matches_input(d):
    shape, out = _forward_shapes(d)
    assert out == shape


def test_same_seed_same_forward():
    spec = ModelSpec("unet", dims=2, depth=2, base_channels=4, gate_placement="resample", p=2)
    x = Tensor(np.random.default_rng(3).uniform(size=(2, 8, 8, 1)))
    with no_grad():
        a = build_model(spec, 7)(x).values
        b = build_model(spec, 7)(x).values
        c = build_model(spec, 8)(x).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("d", [SPECS_1D[1], SPECS_1D[2], SPECS_1D[3], SPECS_2D[3], SPECS_2D[4], SPECS_2D[5]],
                         ids=lambda d: ModelSpec.from_dict(dict(d)).name)
def test_model_gradients(d):
    spec = ModelSpec.from_dict(dict(d))
    m = build_model(spec, 4)
    r = np.random.default_rng(5)
    shape = (2, 12, 1) if spec.dims == 1 else (2, 8, 8, 1)
    x, t = Tensor(r.uniform(size=shape)), Tensor(r.uniform(size=shape))
    rep = grad_check(lambda: mse_loss(m(x), t), dict(m.named_parameters()), max_entries=12)
    assert rep.passed, rep


def test_state_dict_round_trip(tmp_path):
    spec = ModelSpec("cg", L=2, k=5, c=3, p=2)
    a, b = build_model(spec, 0), build_model(spec, 1)
    a.save(tmp_path / "a.snap")
    b.load(tmp_path / "a.snap")
    x = Tensor(np.random.default_rng(0).uniform(size=(3, 10, 1)))
    with no_grad():
        np.testing.assert_array_equal(a(x).values, b(x).values)
    state = a.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(ContractError):
        b.load_state_dict(state)


def test_export_gating_map_is_bit_identical_and_drops_encoder():
    spec = ModelSpec("unet", dims=2, depth=2, base_channels=4, gate_placement="resample", p=2)
    m = build_model(spec, 0)
    x = Tensor(np.random.default_rng(1).uniform(size=(3, 16, 16, 1)))
    with no_grad():
        before = m(x).values
    n0 = m.num_params()
    maps = export_gating_map(m, (16, 16))
    assert len(maps) == 4 and all(g.source == "frozen" for g in maps.values())
    with no_grad():
        after = m(x).values
    assert np.array_equal(before, after)
    assert m.num_params() < n0


def test_export_1d_cg_map_shape():
    m = build_model(ModelSpec("cg", L=1, k=7, c=3, p=3), 0)
    maps = export_gating_map(m, (30,))
    assert [g.values.shape for g in maps.values()] == [(30, 3)]


def test_export_without_gate_raises():
    with pytest.raises(ContractError):
        export_gating_map(build_model(ModelSpec("cnn", L=2, k=3, c=2), 0), (10,))


def test_frozen_gate_not_slower():
    m = build_model(ModelSpec("cg", L=1, k=7, c=3, p=3), 0)
    x = Tensor(np.random.default_rng(0).uniform(size=(1, 30, 1)))

    def best_of(reps=5, n=200):
        ts = []
        with no_grad():
            for _ in range(reps):
                t0 = time.perf_counter()
                for _ in range(n):
                    m(x)
                ts.append(time.perf_counter() - t0)
        return min(ts)

    encoded = best_of()
    export_gating_map(m, (30,))
    frozen = best_of()
    assert frozen <= encoded


def test_gates_listed_for_cg_unet():
    m = build_model(ModelSpec("unet", dims=2, depth=4, gate_placement="resample", p=2), 0)
    gates = m.gates()
    assert len(gates) == 8 and all(isinstance(g, CoordGate) for _, g in gates)
