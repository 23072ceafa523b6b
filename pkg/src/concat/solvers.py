"""Explicit Runge-Kutta integrators for batched torch states.

Every row of a ``(B, D)`` state carries its own clock: rows integrate from
``t0[b]`` to ``t1[b]`` together, and rows whose interval is exhausted take
zero-length steps, which leave them bit-for-bit unchanged. Fixed-step schemes
restart their grid at ``t0`` and shorten the final step to land on ``t1``.
Adaptive schemes control the step size per row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

Field = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


class SolverError(RuntimeError):
    """Divergence, step-count overrun or a non-finite derivative."""


@dataclass(frozen=True)
class Tableau:
    c: tuple
    a: tuple  # lower-triangular rows, a[i] has i entries
    b: tuple
    b_err: tuple | None = None  # b - b_hat of the embedded pair
    order: int = 1
    error_order: int | None = None

    @property
    def adaptive(self) -> bool:
        return self.b_err is not None


def _pair(b, b_hat):
    return tuple(x - y for x, y in zip(b, b_hat))


TABLEAUS = {
    "euler": Tableau(c=(0.0,), a=((),), b=(1.0,), order=1),
    "midpoint": Tableau(c=(0.0, 0.5), a=((), (0.5,)), b=(0.0, 1.0), order=2),
    "rk4": Tableau(
        c=(0.0, 0.5, 0.5, 1.0),
        a=((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
        b=(1 / 6, 1 / 3, 1 / 3, 1 / 6),
        order=4,
    ),
    "bosh3": Tableau(
        c=(0.0, 0.5, 0.75, 1.0),
        a=((), (0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9)),
        b=(2 / 9, 1 / 3, 4 / 9, 0.0),
        b_err=_pair((2 / 9, 1 / 3, 4 / 9, 0.0), (7 / 24, 1 / 4, 1 / 3, 1 / 8)),
        order=3,
        error_order=2,
    ),
    "dopri5": Tableau(
        c=(0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
        a=(
            (),
            (1 / 5,),
            (3 / 40, 9 / 40),
            (44 / 45, -56 / 15, 32 / 9),
            (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
            (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
            (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
        ),
        b=(35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
        b_err=_pair(
            (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
            (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40),
        ),
        order=5,
        error_order=4,
    ),
}

FIXED_SCHEMES = ("euler", "midpoint", "rk4")
ADAPTIVE_SCHEMES = ("bosh3", "dopri5")


@dataclass
class SolverSpec:
    scheme: str = "rk4"
    fixed_step: float | None = 0.05
    rtol: float | None = 1e-6
    atol: float | None = 1e-8
    max_steps: int = 100_000

    def __post_init__(self):
        if self.scheme not in TABLEAUS:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(TABLEAUS)}")
        if self.scheme in FIXED_SCHEMES:
            if self.fixed_step is None or not self.fixed_step > 0:
                raise ValueError(f"{self.scheme} needs a positive fixed_step")
        else:
            if not (self.rtol and self.rtol > 0 and self.atol and self.atol > 0):
                raise ValueError(f"{self.scheme} needs positive rtol and atol")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def adaptive(self) -> bool:
        return self.scheme in ADAPTIVE_SCHEMES

    @property
    def tolerance(self) -> float:
        """Nominal accuracy scale, used by consistency checks."""
        if self.adaptive:
            return self.atol + self.rtol
        return self.fixed_step ** TABLEAUS[self.scheme].order


def _rk_stages(field: Field, tab: Tableau, t: torch.Tensor, y: torch.Tensor, dt: torch.Tensor):
    ks = []
    for ci, ai in zip(tab.c, tab.a):
        yi = y
        for aij, kj in zip(ai, ks):
            if aij != 0.0:
                yi = yi + (dt * aij) * kj
        ks.append(field(t + ci * dt, yi))
    return ks


def _combine(ks, weights, dt):
    acc = None
    for w, k in zip(weights, ks):
        if w != 0.0:
            acc = w * k if acc is None else acc + w * k
    return dt * acc


def _as_rows(y0, t0, t1):
    squeeze = y0.dim() == 1
    y = y0.unsqueeze(0) if squeeze else y0
    b = y.shape[0]

    def col(t):
        t = torch.as_tensor(t, dtype=y.dtype)
        return (t.expand(b) if t.dim() == 0 else t).reshape(b, 1).detach()

    return y, col(t0), col(t1), squeeze


def ode_solve(field: Field, y0: torch.Tensor, t0, t1, spec: SolverSpec) -> torch.Tensor:
    """Integrate ``dy/dt = field(t, y)`` from ``t0`` to ``t1``.

    ``y0`` is ``(D,)`` or ``(B, D)``; ``t0``/``t1`` are scalars or length-B
    tensors. ``field`` receives ``t`` as ``(B, 1)``.
    """
    y, t0, t1, squeeze = _as_rows(y0, t0, t1)
    if torch.any(t1 < t0):
        raise ValueError("ode_solve integrates forward only (t1 >= t0)")
    if torch.all(t1 == t0):
        return y0
    tab = TABLEAUS[spec.scheme]
    if spec.adaptive:
        out = _solve_adaptive(field, tab, y, t0, t1, spec)
    else:
        out = _solve_fixed(field, tab, y, t0, t1, spec)
    return out.squeeze(0) if squeeze else out


def _check_finite(y, where):
    if not torch.isfinite(y).all():
        raise SolverError(f"non-finite state encountered {where}")


def _solve_fixed(field, tab, y, t0, t1, spec):
    h = spec.fixed_step
    span = (t1 - t0).max().item()
    n_steps = max(1, math.ceil(span / h - 1e-9))
    if n_steps > spec.max_steps:
        raise SolverError(f"{n_steps} steps needed, max_steps={spec.max_steps}")
    for k in range(n_steps):
        t = t0 + k * h
        dt = torch.clamp(t1 - t, min=0.0, max=h)
        y = y + _combine(_rk_stages(field, tab, t, y, dt), tab.b, dt)
        _check_finite(y, f"at fixed step {k}")
    return y


def _rms(x):
    return x.pow(2).mean(dim=1, keepdim=True).sqrt()


def _initial_step(field, y, t0, t1, f0, order, rtol, atol):
    scale = atol + rtol * y.abs()
    d0 = _rms(y / scale)
    d1 = _rms(f0 / scale)
    h0 = torch.where((d0 < 1e-5) | (d1 < 1e-5), torch.full_like(d0, 1e-6), 0.01 * d0 / d1)
    h0 = torch.minimum(h0, t1 - t0)
    f1 = field(t0 + h0, y + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / torch.clamp(h0, min=1e-300)
    dmax = torch.maximum(d1, d2)
    h1 = torch.where(dmax <= 1e-15, torch.maximum(torch.full_like(h0, 1e-6), h0 * 1e-3),
                     (0.01 / torch.clamp(dmax, min=1e-300)) ** (1.0 / (order + 1)))
    return torch.minimum(100 * h0, h1)


def _solve_adaptive(field, tab, y, t0, t1, spec, safety=0.9, min_factor=0.2, max_factor=10.0):
    rtol, atol = spec.rtol, spec.atol
    t = t0.clone()
    with torch.no_grad():
        f0 = field(t, y)
        _check_finite(f0, "in the initial derivative")
        dt = _initial_step(field, y.detach(), t0, t1, f0.detach(), tab.order, rtol, atol)
    exponent = -1.0 / (tab.error_order + 1)
    done = t >= t1
    steps = 0
    while not bool(done.all()):
        steps += 1
        if steps > spec.max_steps:
            raise SolverError(f"exceeded max_steps={spec.max_steps} before reaching t1")
        remaining = t1 - t
        last = dt >= remaining
        dt_eff = torch.where(done, torch.zeros_like(dt), torch.where(last, remaining, dt))
        ks = _rk_stages(field, tab, t, y, dt_eff)
        y_new = y + _combine(ks, tab.b, dt_eff)
        err = _combine(ks, tab.b_err, dt_eff)
        _check_finite(y_new, f"at adaptive step {steps}")
        with torch.no_grad():
            scale = atol + rtol * torch.maximum(y.abs(), y_new.abs())
            err_norm = (err.abs() / scale).amax(dim=1, keepdim=True)
            accept = (err_norm <= 1.0) | done
            factor = torch.where(err_norm == 0, torch.full_like(err_norm, max_factor),
                                 safety * torch.clamp(err_norm, min=1e-300) ** exponent)
            factor = torch.clamp(factor, min_factor, max_factor)
            factor = torch.where(accept, factor, torch.clamp(factor, max=1.0))
            t_next = torch.where(accept & last, t1, torch.where(accept, t + dt_eff, t))
            new_dt = torch.where(done, dt, torch.clamp(dt_eff, min=0.0) * factor)
            too_small = (~done) & (~accept) & (new_dt <= 1e-14 * torch.clamp(t.abs(), min=1.0))
            if bool(too_small.any()):
                raise SolverError("step size underflow; the problem may be stiff or divergent")
        y = torch.where(accept, y_new, y)
        t = t_next
        dt = new_dt
        done = t >= t1
    return y


def convergence_order(scheme: str, field: Field | None = None, y0=None,
                      exact: Callable[[float], np.ndarray] | None = None,
                      t1: float = 1.0, steps=(0.1, 0.05, 0.025)) -> float:
    """Empirical order from a least-squares fit of log(error) against log(step).

    Defaults to ``dh/dt = -h``, ``h(0) = 1`` on [0, 1].
    """
    if field is None:
        field = lambda t, y: -y  # noqa: E731
        y0 = torch.ones(1, dtype=torch.float64)
        exact = lambda t: np.exp(-t)  # noqa: E731
    tab = TABLEAUS[scheme]
    errors = []
    for h in steps:
        # adaptive pairs are run on a fixed grid here, using their propagating weights
        rows, a, b, _ = _as_rows(y0, 0.0, t1)
        y = _solve_fixed(field, tab, rows, a, b, SolverSpec(scheme="rk4", fixed_step=h))
        errors.append(float(np.max(np.abs(y.detach().numpy() - exact(t1)))))
    slope, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(slope)
