import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from concat.model import (ConCat, Example, ModelConfig, cascade_losses, collate, loss, predict_popularity,
                          squared_log_error)
from concat.solvers import SolverSpec
from concat.tpp import nll
from concat.train import seeded, toy_examples

RK4 = SolverSpec("rk4", fixed_step=0.02)


def small_cfg(**kw):
    base = dict(cascade_dim=4, global_dim=4, attn_width=4, hidden=4, head_hidden=4)
    base.update(kw)
    return ModelConfig(**base)


def make(seed=0, **kw):
    with seeded(seed):
        return ConCat(small_cfg(**kw))


def zero_field(model):
    with torch.no_grad():
        model.field.out.weight.zero_()
        model.field.out.bias.zero_()


def test_head_output_zero_gives_ln2():
    model = make()
    with torch.no_grad():
        for p in model.head.parameters():
            p.zero_()
        preds, _ = model(collate(toy_examples()), RK4)
    assert preds.item() == pytest.approx(math.log(2), abs=1e-15)


@given(st.integers(0, 1000), st.floats(0.1, 30.0))
def test_predictions_positive(seed, scale):
    model = make(seed % 13)
    with torch.no_grad():
        for p in model.head.parameters():
            p.mul_(scale)
        model.head.output_layer.bias.fill_(-scale * 20)
        preds, _ = model(collate(toy_examples(seed=seed)), RK4)
    assert torch.all(preds > 0)


def test_no_align_differs_only_with_gap_and_nonzero_field():
    gap = toy_examples(times=(0.0, 0.2, 0.45, 0.7), observation_time=1.0)
    flush = toy_examples(times=(0.0, 0.2, 0.45, 1.0), observation_time=1.0)
    model = make(1)
    with torch.no_grad():
        a, _ = model(collate(gap), RK4, no_align=False)
        b, _ = model(collate(gap), RK4, no_align=True)
        assert a.item() != b.item()
        a, _ = model(collate(flush), RK4, no_align=False)
        b, _ = model(collate(flush), RK4, no_align=True)
        assert a.item() == b.item()
        zero_field(model)
        a, _ = model(collate(gap), RK4, no_align=False)
        b, _ = model(collate(gap), RK4, no_align=True)
        assert a.item() == b.item()


def test_no_align_config_flag_is_default():
    model = make(1, no_align=True)
    with torch.no_grad():
        a, traj = model(collate(toy_examples()), RK4)
        b = predict_popularity(traj, model.head, model.cfg, no_align=True)
    assert torch.equal(a, b)


def test_loss_reference_values():
    assert loss(3, 1.0, [], 0.0, small_cfg(no_tpp=True)) == 1.0
    t_s = 2.5
    assert loss(7, 7.0, [], t_s, small_cfg()) == t_s
    assert loss(7, 7.0, [1.0], t_s, small_cfg()) == t_s


def test_batched_loss_recomposes_into_parts():
    model = make(2)
    ex = toy_examples(seed=5)
    with torch.no_grad():
        preds, traj = model(collate(ex), RK4)
        batched = cascade_losses(collate(ex).labels, preds, traj, model.cfg).item()
        lam = traj.event_intensities[0][traj.event_mask[0]].tolist()
        comp = traj.aligned_compensator.item()
    reg = (math.log2(ex[0].label + 1) - math.log2(preds.item() + 1)) ** 2
    assert batched == pytest.approx(reg + nll(lam, comp), abs=1e-12)
    assert loss(ex[0].label, preds.item(), lam, comp, model.cfg) == pytest.approx(batched, abs=1e-12)
    assert len(lam) == len(ex[0].times) - 1


def test_no_tpp_intensity_gradients_exactly_zero():
    model = make(3, no_tpp=True)
    batch = collate(toy_examples())
    preds, traj = model(batch, RK4)
    cascade_losses(batch.labels, preds, traj, model.cfg).sum().backward()
    for p in model.intensity.parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0
    assert model.head.net[0].in_features == model.cfg.hidden


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_squared_log_error_minimised_at_truth(p, q):
    p_t = torch.tensor(p, dtype=torch.float64)
    assert squared_log_error(p_t, p_t).item() == 0.0
    assert squared_log_error(p_t, torch.tensor(q, dtype=torch.float64)).item() >= 0.0


def test_collate_pads_with_last_time():
    a = Example("a", np.zeros((3, 4)), np.zeros((3, 4)), np.array([0.0, 0.1, 0.2]), 1.0, 2)
    b = Example("b", np.ones((1, 4)), np.ones((1, 4)), np.array([0.0]), 2.0, 5)
    batch = collate([a, b])
    assert batch.times.tolist() == [[0.0, 0.1, 0.2], [0.0, 0.0, 0.0]]
    assert batch.lengths.tolist() == [3, 1]
    assert batch.labels.tolist() == [2.0, 5.0]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(cascade_dim=5)
    with pytest.raises(ValueError):
        ModelConfig(hidden=0)
    assert small_cfg().widths()["head_input"] == 5
    assert small_cfg(no_tpp=True).widths()["head_input"] == 4
