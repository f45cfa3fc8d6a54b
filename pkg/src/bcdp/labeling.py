"""Expert-vs-offline discrimination and reward labeling.

A sigmoid-head dense net is trained to separate expert (s, a) pairs (label 1)
from offline pairs (label 0). Its clipped output c is turned into a density
ratio c/(1-c) and rescaled into a reward in [0, 1]; expert samples are always
labeled 1. The discriminator is trained once and then frozen, so labeling is a
pure function of (s, a) and the paired datasets stay consistently labeled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .data import Demoset, with_labels
from .errors import ValidationError
from .nets import adam_update, forward, init_adam, init_net, loss_and_grad


def density_ratio(c_raw, clip_lo: float = 0.1, clip_hi: float = 0.9):
    """Clipped odds c/(1-c); with default clips the ratio lives in [1/9, 9]."""
    c = np.asarray(c_raw, dtype=float)
    if np.any(c <= 0.0) or np.any(c >= 1.0):
        raise ValidationError("raw discriminator output must lie strictly in (0, 1)")
    c = np.clip(c, clip_lo, clip_hi)
    rho = c / (1.0 - c)
    return float(rho) if np.isscalar(c_raw) else rho


def rescale_ratio(rho, clip_lo: float = 0.1, clip_hi: float = 0.9,
                  mode: str = "ratio"):
    """Map the clipped ratio onto [0, 1], linearly in the ratio or its log."""
    rho = np.asarray(rho, dtype=float)
    lo = clip_lo / (1.0 - clip_lo)
    hi = clip_hi / (1.0 - clip_hi)
    if mode == "ratio":
        out = (rho - lo) / (hi - lo)
    elif mode == "log_ratio":
        out = (np.log(rho) - np.log(lo)) / (np.log(hi) - np.log(lo))
    else:
        raise ValidationError(f"unknown rescale mode {mode!r}")
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RewardLabel:
    value: float
    source: str  # "expert" | "offline"

    def __post_init__(self):
        if self.source not in ("expert", "offline"):
            raise ValidationError(f"unknown label source {self.source!r}")
        if not (0.0 <= self.value <= 1.0):
            raise ValidationError(f"label value {self.value} outside [0, 1]")
        if self.source == "expert" and self.value != 1.0:
            raise ValidationError("expert samples are always labeled 1")


class ExpertDiscriminator(BaseEstimator):
    """Dense binary classifier over concatenated (s, a) rows.

    fit(X, y) trains with balanced minibatches (half label-1, half label-0
    rows per step) by Adam on binary cross-entropy. ``rescale`` selects how
    the density ratio maps onto reward values.
    """

    def __init__(self, hidden_dims=(64, 64), training_steps=2000, batch_size=256,
                 lr=1e-3, clip_lo=0.1, clip_hi=0.9, rescale="ratio", seed=0):
        self.hidden_dims = hidden_dims
        self.training_steps = training_steps
        self.batch_size = batch_size
        self.lr = lr
        self.clip_lo = clip_lo
        self.clip_hi = clip_hi
        self.rescale = rescale
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValidationError("X must be (n, d) with one binary label per row")
        pos = np.flatnonzero(y == 1.0)
        neg = np.flatnonzero(y == 0.0)
        if pos.size == 0 or neg.size == 0 or pos.size + neg.size != y.size:
            raise ValidationError("labels must be binary with both classes present")
        rng = np.random.default_rng(self.seed)
        net = init_net((X.shape[1], *self.hidden_dims, 1), rng,
                       output_activation="sigmoid")
        adam = init_adam(net, self.lr)
        half = max(self.batch_size // 2, 1)
        for _ in range(self.training_steps):
            rows = np.concatenate([pos[rng.integers(0, pos.size, half)],
                                   neg[rng.integers(0, neg.size, half)]])
            targets = np.concatenate([np.ones(half), np.zeros(half)])[:, None]
            _, grads = loss_and_grad(net, X[rows], "bce", targets=targets)
            adam_update(net, grads, adam)
        self.net_ = net
        self.n_features_in_ = X.shape[1]
        return self

    def raw_output(self, X) -> np.ndarray:
        """Unclipped discriminator outputs c(s, a) in (0, 1)."""
        return forward(self.net_, np.asarray(X, dtype=float))[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        c = self.raw_output(X)
        return np.column_stack([1.0 - c, c])

    def predict(self, X) -> np.ndarray:
        return (self.raw_output(X) >= 0.5).astype(int)

    def label_values(self, X) -> np.ndarray:
        """Reward labels for offline rows: rescaled clipped density ratio."""
        rho = density_ratio(self.raw_output(X), self.clip_lo, self.clip_hi)
        return rescale_ratio(rho, self.clip_lo, self.clip_hi, self.rescale)


def _design_matrix(ds: Demoset) -> np.ndarray:
    arrays = ds.stacked()
    return np.hstack([arrays["s"], arrays["a"]])


def train_discriminator(expert: Demoset, offline: Demoset, steps: int = 2000,
                        batch_size: int = 256, lr: float = 1e-3,
                        seed: int = 0, **kwargs) -> ExpertDiscriminator:
    """Fit the discriminator on two demosets (expert rows labeled 1)."""
    if (expert.state_dim, expert.action_dim) != (offline.state_dim, offline.action_dim):
        raise ValidationError("expert and offline demosets have different dimensions")
    xe, xo = _design_matrix(expert), _design_matrix(offline)
    disc = ExpertDiscriminator(training_steps=steps, batch_size=batch_size,
                               lr=lr, seed=seed, **kwargs)
    return disc.fit(np.vstack([xe, xo]),
                    np.concatenate([np.ones(len(xe)), np.zeros(len(xo))]))


def label(disc: ExpertDiscriminator, s, a, source: str) -> RewardLabel:
    """One (s, a) pair: expert source is 1 exactly, offline via the ratio map."""
    if source == "expert":
        return RewardLabel(value=1.0, source="expert")
    x = np.concatenate([np.atleast_1d(s), np.atleast_1d(a)])[None, :]
    return RewardLabel(value=float(disc.label_values(x)[0]), source="offline")


def label_demoset(disc: ExpertDiscriminator, ds: Demoset,
                  source: str = "offline") -> Demoset:
    """Labeled copy of a demoset (the preprocessing pass before training)."""
    if source == "expert":
        values = np.ones(ds.n_transitions)
    elif source == "offline":
        values = disc.label_values(_design_matrix(ds))
    else:
        raise ValidationError(f"unknown label source {source!r}")
    return with_labels(ds, values)
