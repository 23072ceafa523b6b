import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from concat.tpp import IntensityHead, intensity, inverse_softplus, nll, softplus


def test_softplus_reference_values():
    assert softplus(torch.tensor(0.0, dtype=torch.float64)).item() == pytest.approx(math.log(2), abs=1e-15)
    tiny = softplus(torch.tensor(-40.0, dtype=torch.float64)).item()
    assert 0 < tiny < 1e-17
    assert abs(softplus(torch.tensor(50.0, dtype=torch.float64)).item() - 50.0) < 1e-9
    assert float(softplus(np.array(0.0))) == pytest.approx(math.log(2), abs=1e-15)
    assert 0 < float(softplus(np.array(-40.0))) < 1e-17


@given(st.floats(-30, 30))
def test_softplus_numpy_and_torch_agree(x):
    a = float(softplus(np.array(x)))
    b = softplus(torch.tensor(x, dtype=torch.float64)).item()
    assert a == pytest.approx(b, rel=1e-13, abs=1e-300)
    assert inverse_softplus(a) == pytest.approx(x, abs=1e-9 * max(1.0, abs(x)))


def test_intensity_monotone_in_preactivation():
    head = IntensityHead(1)
    with torch.no_grad():
        head.linear.weight.fill_(1.0)
        head.linear.bias.zero_()
    h = torch.linspace(-45, 45, 301, dtype=torch.float64).unsqueeze(1)
    lam = intensity(h, head).squeeze(1)
    assert torch.all(lam > 0)
    assert torch.all(lam[1:] > lam[:-1])


def test_nll_reference_values():
    assert nll([1.0], 1.0) == 1.0
    assert nll([2.0, 2.0], 2.0) == pytest.approx(2 - 2 * math.log(2), abs=1e-15)
    assert nll([], 3.25) == 3.25


def test_nll_rejects_non_positive():
    with pytest.raises(ValueError):
        nll([1.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        nll(torch.tensor([-1.0], dtype=torch.float64), torch.tensor(1.0, dtype=torch.float64))


@given(st.floats(0.05, 20), st.floats(0.01, 10), st.integers(0, 30))
def test_constant_intensity_matches_poisson(lam, horizon, k):
    got = nll([lam] * k, lam * horizon)
    assert abs(got - (lam * horizon - k * math.log(lam))) < 1e-10 * max(1.0, abs(got))


@given(st.lists(st.floats(0.1, 5), min_size=1, max_size=8), st.integers(0, 7), st.floats(0.01, 3))
def test_nll_decreases_when_an_intensity_rises(lams, idx, bump):
    idx %= len(lams)
    raised = list(lams)
    raised[idx] += bump
    assert nll(raised, 2.0) < nll(lams, 2.0)


def test_nll_tensor_form_is_differentiable():
    lam = torch.tensor([0.5, 2.0], dtype=torch.float64, requires_grad=True)
    comp = torch.tensor(1.5, dtype=torch.float64, requires_grad=True)
    nll(lam, comp).backward()
    assert torch.allclose(lam.grad, torch.tensor([-2.0, -0.5], dtype=torch.float64))
    assert comp.grad.item() == 1.0
