import numpy as np
import pytest
import torch

from concat.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from concat.model import Example, ModelConfig
from concat.solvers import SolverSpec
from concat.train import NumericalError, TrainingConfig, gradcheck, init_model, predict, toy_examples, train

RK4 = SolverSpec("rk4", fixed_step=0.05)
CFG = ModelConfig(cascade_dim=4, global_dim=4, attn_width=4, hidden=4, head_hidden=4)


def examples(n=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        m = int(rng.integers(2, 6))
        times = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, m - 1))])
        out.append(Example(f"c{k}", rng.normal(size=(m, 4)), rng.normal(size=(m, 4)), times, 1.0,
                           int(rng.integers(0, 30))))
    return out


def state(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def test_zero_learning_rate_is_identity():
    data = examples()
    base = train(data, None, CFG, TrainingConfig(lr=0.0, epochs=0, batch_size=4), RK4).model
    after = train(data, None, CFG, TrainingConfig(lr=0.0, epochs=3, batch_size=4), RK4).model
    for (k, a), b in zip(state(base).items(), state(after).values()):
        assert torch.equal(a, b), k


def test_same_seed_same_log_and_weights():
    data = examples()
    cfg = TrainingConfig(lr=1e-2, epochs=3, batch_size=4, seed=9)
    a = train(data, data[:2], CFG, cfg, RK4)
    b = train(data, data[:2], CFG, cfg, RK4)
    assert a.log == b.log
    assert all(torch.equal(x, y) for x, y in zip(state(a.model).values(), state(b.model).values()))
    assert set(a.log[0]) == {"epoch", "train_loss", "train_msle", "val_loss", "val_msle"}


def test_training_reduces_loss():
    data = examples(8)
    res = train(data, None, CFG, TrainingConfig(lr=2e-2, epochs=15, batch_size=8), RK4)
    assert res.log[-1]["train_loss"] < res.log[0]["train_loss"]


def test_patience_stops_early_and_keeps_best():
    data = examples(6)
    res = train(data, data[:3], CFG, TrainingConfig(lr=0.0, epochs=20, batch_size=6, patience=2), RK4)
    assert len(res.log) == 3 and res.best_epoch == 1


def test_non_finite_loss_names_cascade():
    data = examples(3)
    data[1].cascade_embeds[:] = np.nan
    with pytest.raises(NumericalError, match="c1"):
        train(data, None, CFG, TrainingConfig(epochs=1, batch_size=3), RK4)


def test_gradcheck_toy_rk4():
    model = init_model(CFG, 0)
    res = gradcheck(model, toy_examples(), SolverSpec("rk4", fixed_step=0.05))
    assert res.max_rel_error < 1e-3 and res.checked > 100


def test_gradcheck_linear_field_affine_head():
    cfg = ModelConfig(cascade_dim=4, global_dim=4, attn_width=4, hidden=4, head_hidden=0,
                      f1_activation="identity")
    res = gradcheck(init_model(cfg, 1), toy_examples(), SolverSpec("rk4", fixed_step=0.05),
                    epsilon=1e-2, stencil=4)
    assert res.max_rel_error < 1e-6


def test_gradcheck_excludes_unused_parameters():
    cfg = ModelConfig(cascade_dim=4, global_dim=4, attn_width=4, hidden=4, head_hidden=4, no_tpp=True)
    res = gradcheck(init_model(cfg, 2), toy_examples(), SolverSpec("rk4", fixed_step=0.05))
    n_intensity = 4 + 1
    assert res.excluded >= n_intensity
    assert res.worst is None or not res.worst[0].startswith("intensity")


def test_gradcheck_needs_fixed_step():
    with pytest.raises(ValueError):
        gradcheck(init_model(CFG, 0), toy_examples(), SolverSpec("dopri5"))


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = init_model(CFG, 4)
    with torch.no_grad():
        model.head.compensator_scale.fill_(7.25)
    save_checkpoint(tmp_path / "m.json", model, RK4, 4, {"note": "x"})
    back, spec, seed, extra = load_checkpoint(tmp_path / "m.json", expect=CFG)
    assert spec == RK4 and seed == 4 and extra == {"note": "x"}
    for (k, a), b in zip(model.state_dict().items(), back.state_dict().values()):
        assert torch.equal(a, b), k
    p1, _ = predict(model, toy_examples(), RK4)
    p2, _ = predict(back, toy_examples(), RK4)
    assert np.array_equal(p1, p2)
    save_checkpoint(tmp_path / "n.json", back, RK4, 4, {"note": "x"})
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "n.json").read_bytes()


def test_checkpoint_width_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m.json", init_model(CFG, 0), RK4, 0)
    wider = ModelConfig(cascade_dim=4, global_dim=4, attn_width=4, hidden=8, head_hidden=4)
    with pytest.raises(CheckpointError, match="'hidden': 8.*'hidden': 4"):
        load_checkpoint(tmp_path / "m.json", expect=wider)


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainingConfig(lr_schedule="step")
