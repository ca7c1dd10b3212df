"""Constructed diff-series families with known classification outcomes."""

import numpy as np


def detected_series(rng, r=8):
    """Strictly increasing over the last r steps, global max at the end."""
    length = int(rng.integers(r + 1, r + 5))
    base = rng.uniform(-1.0, 0.0, length - r)
    steps = rng.uniform(0.05, 0.3, r)
    final = base[-1] + steps.sum()
    dominate = base.max() + 0.05
    if final <= dominate:
        steps[-1] += dominate - final + 0.05
    return np.concatenate([base, base[-1] + np.cumsum(steps)])


def plateau_series(rng, r=8):
    """One exact tie inside the last r steps; everything else as detected."""
    series = detected_series(rng, r)
    j = int(rng.integers(len(series) - r, len(series)))
    series[j] = series[j - 1]
    if j < len(series) - 1:
        # keep the rest of the tail strictly increasing after the plateau
        for i in range(j + 1, len(series)):
            series[i] = max(series[i], series[i - 1] + 0.01)
    return series


def early_max_series(rng, r=8):
    """Strictly increasing tail, but an earlier layer spikes above the end."""
    r_len = int(rng.integers(r + 2, r + 5))
    base = rng.uniform(-1.0, 0.0, r_len - r)
    steps = rng.uniform(0.05, 0.3, r)
    series = np.concatenate([base, base[-1] + np.cumsum(steps)])
    # spike any base element except the tail's anchor, so n_l stays at r
    k = int(rng.integers(0, len(base) - 1))
    series[k] = series[-1] + rng.uniform(0.1, 1.0)
    return series
