"""Temperature scaling of multi-tissue logits against expected calibration error."""

from __future__ import annotations

import numpy as np
from scipy.special import softmax as _scipy_softmax

from .volume import ProbMap, Volume, require_same_grid


def softmax_with_temperature(logits, temperature: float):
    """Softmax of logits / T along the channel axis.

    Accepts a 7-channel logit Volume (returns a ProbMap) or a plain
    (..., C) array (returns an array).  The argmax is invariant to T.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if isinstance(logits, Volume):
        probs = _scipy_softmax(logits.data.astype(np.float64) / temperature, axis=3)
        return ProbMap(probs.astype(np.float32), logits.spacing_mm, logits.origin_mm)
    arr = np.asarray(logits, dtype=np.float64)
    return _scipy_softmax(arr / temperature, axis=-1)


def _confidence_and_correct(probs, labels):
    if isinstance(probs, Volume):
        p = probs.data.reshape(-1, probs.channels)
        y = labels.data.ravel() if isinstance(labels, Volume) else np.asarray(labels).ravel()
    else:
        p = np.asarray(probs)
        y = np.asarray(labels).ravel()
    if p.ndim == 2:
        conf = p.max(axis=1)
        correct = p.argmax(axis=1) == y
    elif p.ndim == 1:
        # Pre-reduced inputs: per-sample confidences plus correctness flags.
        conf = p
        correct = y.astype(bool)
    else:
        raise ValueError(f"expected (N, C) probabilities or (N,) confidences, got {p.shape}")
    return conf.astype(np.float64), correct


def ece(probs, labels, n_bins: int = 15) -> float:
    """Expected calibration error with equal-width confidence bins.

    Bins are left-closed ([i/n, (i+1)/n), the last closed above); empty
    bins contribute nothing.
    """
    conf, correct = _confidence_and_correct(probs, labels)
    n = conf.size
    if n == 0:
        raise ValueError("ECE of zero samples is undefined")
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct.astype(np.float64), minlength=n_bins)
    occupied = counts > 0
    gap = np.abs(acc_sum[occupied] - conf_sum[occupied]) / counts[occupied]
    return float((counts[occupied] / n * gap).sum())


def fit_temperature(logits, labels, n_bins: int = 15,
                    log_t_bounds: tuple[float, float] = (-3.0, 3.0),
                    grid_points: int = 61) -> float:
    """Search the temperature minimizing ECE on sample logits.

    Deterministic 1D search over log T: a uniform grid (always including
    log T = 0, so the result is never worse than T = 1 on its own
    samples) followed by golden-section refinement around the grid
    minimum.  ECE is piecewise constant in T, so the best value seen
    anywhere during the search wins.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).ravel()
    if logits.ndim != 2:
        raise ValueError(f"expected (N, C) sample logits, got shape {logits.shape}")
    if np.unique(y).size < 2:
        raise ValueError("temperature fitting needs at least 2 classes present")

    def objective(log_t: float) -> float:
        return ece(softmax_with_temperature(logits, float(np.exp(log_t))), y, n_bins)

    lo, hi = log_t_bounds
    grid = np.linspace(lo, hi, grid_points)
    if not np.any(np.isclose(grid, 0.0)):
        grid = np.sort(np.append(grid, 0.0))
    evals = [(objective(g), g) for g in grid]
    best_val, best_log_t = min(evals, key=lambda e: (e[0], abs(e[1])))

    i = int(np.argmin([e[0] for e in evals]))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = objective(x1), objective(x2)
    for _ in range(48):
        for val, pt in ((f1, x1), (f2, x2)):
            if (val, abs(pt)) < (best_val, abs(best_log_t)):
                best_val, best_log_t = val, pt
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = objective(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = objective(x2)
    return float(np.exp(best_log_t))


def sample_voxel_logits(logit_volume: Volume, label_volume: Volume,
                        n_samples: int = 100_000, seed: int = 0):
    """Uniform random voxel subset for fitting, as (N, C) logits + labels."""
    require_same_grid(logit_volume, label_volume)
    flat_logits = logit_volume.data.reshape(-1, logit_volume.channels)
    flat_labels = label_volume.data.ravel()
    total = flat_labels.size
    if n_samples >= total:
        return flat_logits.copy(), flat_labels.copy()
    rng = np.random.default_rng(seed)
    idx = rng.choice(total, size=n_samples, replace=False)
    idx.sort()
    return flat_logits[idx], flat_labels[idx]
