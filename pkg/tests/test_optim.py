import csv

import numpy as np
import pytest

from coordgate_lab import ConfigError, ContractError, ModelSpec, Tensor, TrainingAborted, build_model
from coordgate_lab.datagen import DatasetPair
from coordgate_lab.optim import (
    Adam, AdamState, PlateauSchedule, TrainConfig, adam_step, plateau_schedule, split_indices, train,
)


# eps=1e-8 shrinks the step by eps/|g|, so the band holds for |g| >= 1e-2
@pytest.mark.parametrize("g", [3.7, -0.02, 0.05, -250.0])
def test_adam_first_step_is_lr_sign(g):
    p = np.array([1.0])
    st = AdamState.for_params([p], lr=0.01)
    adam_step([p], [np.array([g])], st)
    delta = p[0] - 1.0
    assert np.sign(delta) == -np.sign(g)
    assert 0.01 * (1 - 1e-6) <= abs(delta) <= 0.01


def test_adam_zero_grad_keeps_param_and_counts_step():
    p = np.array([2.0, -1.0])
    st = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], st)
    assert p.tolist() == [2.0, -1.0] and st.t == 1


def _scalar_adam_reference(w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * (w - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_converges_on_quadratic_like_reference():
    w = Tensor([0.0], requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        w.grad = 2 * (w.values - 3.0)
        opt.step()
    assert abs(w.values[0] - 3.0) < 1e-2
    assert w.values[0] == pytest.approx(_scalar_adam_reference(0.0, 0.1, 200), abs=1e-12)
    assert np.all(opt.state.v[0] >= 0)


def test_adam_contract_errors():
    p = np.zeros(2)
    st = AdamState.for_params([p])
    with pytest.raises(ContractError):
        adam_step([p], [None], st)
    with pytest.raises(ContractError):
        adam_step([p], [np.zeros(3)], st)


def test_plateau_rules():
    assert plateau_schedule([1.0] * 21, 20, 0.5, 1.0) == 0.5
    assert plateau_schedule([1.0] * 20, 20, 0.5, 1.0) == 1.0
    assert plateau_schedule(list(np.linspace(1, 0.1, 50)), 20, 0.5, 1.0) == 1.0
    assert plateau_schedule([1.0] * 21 + [0.9] * 21, 20, 0.5, 1.0) == 0.25
    with pytest.raises(ContractError):
        plateau_schedule([], 20, 0.5, 1.0)
    with pytest.raises(ConfigError):
        PlateauSchedule(1.0, patience=0)


def test_plateau_lower_bound():
    rng = np.random.default_rng(0)
    losses = rng.uniform(size=300)
    for patience in (1, 3, 10):
        s = PlateauSchedule(1.0, patience, 0.5)
        for e, v in enumerate(losses, 1):
            lr = s.step(v)
            assert lr >= 0.5 ** (e / patience)


def test_train_config_validation():
    for bad in [{"patience": 0}, {"decay": 1.0}, {"train_fraction": 0.8}, {"batch_size": 0}, {"nope": 1}]:
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(bad)


def test_split_is_deterministic_and_disjoint():
    cfg = TrainConfig(seed=4)
    tr, va = split_indices(100, cfg)
    tr2, va2 = split_indices(100, cfg)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    assert len(va) == 10 and not set(tr) & set(va) and len(set(tr) | set(va)) == 100


def _linear_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 8, 1))
    return DatasetPair(x, 3.0 * x + 0.5, seed=seed)


def test_train_solves_exact_linear_problem():
    m = build_model(ModelSpec("cnn", L=1, k=1, c=1), 0)
    hist, _ = train(m, _linear_data(), TrainConfig(epochs=150, batch_size=16, lr=0.05, patience=5))
    assert hist.records[-1].train_loss < 1e-8
    assert hist.best_val_loss < 1e-8


def test_lr_zero_keeps_parameters():
    m = build_model(ModelSpec("cg", L=1, k=3, c=2, p=2), 0)
    before = {k: v.copy() for k, v in m.state_dict().items()}
    train(m, _linear_data(60), TrainConfig(epochs=2, batch_size=8, lr=0.0))
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_train_is_deterministic(tmp_path):
    out = []
    for run in range(2):
        m = build_model(ModelSpec("cnn", L=2, k=3, c=2), 3)
        hist, _ = train(m, _linear_data(80), TrainConfig(epochs=5, batch_size=8, lr=0.01, seed=9))
        hist.write_csv(tmp_path / f"h{run}.csv", timing=False)
        out.append((tmp_path / f"h{run}.csv").read_text())
    assert out[0] == out[1]
    rows = list(csv.reader(out[0].splitlines()))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "val_psnr", "lr"] and len(rows) == 6


def test_train_keeps_best_validation_parameters():
    m = build_model(ModelSpec("cnn", L=2, k=3, c=2), 1)
    hist, best = train(m, _linear_data(80), TrainConfig(epochs=8, batch_size=8, lr=0.05))
    assert hist.best_val_loss == min([hist.best_val_loss] + hist.column("val_loss"))
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(v, best[k])
    lrs = hist.column("lr")
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_nan_loss_aborts_with_location():
    data = _linear_data(40)
    data.targets[3, 0, 0] = np.nan
    m = build_model(ModelSpec("cnn", L=1, k=1, c=1), 0)
    with pytest.raises(TrainingAborted) as ei:
        train(m, data, TrainConfig(epochs=3, batch_size=4))
    assert ei.value.epoch == 1 and ei.value.batch is not None and ei.value.model == "CNN(1,1,1)"
