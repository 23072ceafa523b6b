"""Desk-scale fixture cascades: Poisson arrivals over random reshare trees."""
from __future__ import annotations

import numpy as np

from .data import EventTriplet, RawCascade, format_record


def synthetic_records(n_cascades: int = 100, seed: int = 0, n_users: int = 400,
                      observation_time: float = 3600.0, prediction_time: float = 86400.0,
                      min_observed: int = 10, mean_size: float = 40.0,
                      max_size: int = 300) -> list[RawCascade]:
    """Generate cascades in seconds since the root post.

    Each cascade draws a size from a log-normal, a decay time between 20
    minutes and 3 hours, and exponential arrival times truncated at the
    prediction time. Each newcomer attaches to the root with probability 0.4
    and otherwise to a uniformly chosen earlier participant. Cascades with
    fewer than ``min_observed`` arrivals before ``observation_time`` are
    redrawn.
    """
    rng = np.random.default_rng(seed)
    users = np.array([f"u{k}" for k in range(n_users)])
    out = []
    while len(out) < n_cascades:
        size = int(min(max_size, n_users - 1, rng.poisson(rng.lognormal(np.log(mean_size), 0.6))))
        tau = rng.uniform(1200.0, 3 * 3600.0)
        times = np.sort(rng.exponential(tau, size=size))
        times = np.round(times[times <= prediction_time], 1)
        if np.sum(times <= observation_time) < min_observed:
            continue
        people = rng.choice(users, size=len(times) + 1, replace=False)
        origin = str(people[0])
        joined = [origin]
        triplets = []
        for t, user in zip(times, people[1:]):
            if rng.random() < 0.4:
                parent = origin
            else:
                parent = joined[rng.integers(len(joined))]
            triplets.append(EventTriplet(parent, str(user), float(t)))
            joined.append(str(user))
        out.append(RawCascade(f"c{len(out)}", origin, 1.6e9 + 600.0 * len(out), triplets))
    return out


def write_synthetic(path, **kwargs) -> list[RawCascade]:
    records = synthetic_records(**kwargs)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(format_record(r) + "\n")
    return records
