"""Observation preprocessing: streaming normalizers and cosine-basis expansion.

The pipeline applied to every observation (rollout and update alike) is
raw -> normalize -> expand -> normalize, with two independent running
normalizers.  Their statistics are frozen while a rollout is collected and
its batch preprocessed, then updated once from that batch.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dct, idct

from .errors import ConfigError


def idct_expand(obs: np.ndarray, out_dim: int) -> np.ndarray:
    """Embed a D-vector as the leading DCT-II coefficients of a longer signal.

    The observation becomes the first D orthonormal DCT-II coefficients of a
    length-``out_dim`` signal (the rest zero) and the inverse transform is
    returned.  Linear and norm-preserving; the forward DCT recovers the
    observation in its first D slots.  Works on (..., D) batches.
    """
    obs = np.asarray(obs, dtype=np.float64)
    d = obs.shape[-1]
    if d > out_dim:
        raise ConfigError(f"cannot expand {d}-dim observation into {out_dim} coefficients")
    padded = np.zeros(obs.shape[:-1] + (out_dim,), dtype=np.float64)
    padded[..., :d] = obs
    return idct(padded, type=2, norm="ortho", axis=-1)


def dct_coefficients(signal: np.ndarray, n_keep: int) -> np.ndarray:
    """Forward orthonormal DCT-II, truncated to the first n_keep coefficients."""
    return dct(np.asarray(signal, dtype=np.float64), type=2, norm="ortho", axis=-1)[..., :n_keep]


class RunningNormalizer:
    """Streaming per-dimension mean/variance with (x - mean)/(std + 1e-8).

    ``update`` folds a batch into the running statistics (parallel Welford
    merge); ``apply`` standardizes without touching them; ``normalize`` does
    update-then-apply for single-stream use.  Before any update the
    statistics are mean 0 / var 1 (apply is then an identity up to the
    std floor).
    """

    EPS = 1e-8

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.count = 0.0
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros(dim, dtype=np.float64)

    @property
    def var(self) -> np.ndarray:
        if self.count < 1:
            return np.ones(self.dim, dtype=np.float64)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean += delta * (n / total)
        self.m2 += b_m2 + delta ** 2 * (self.count * n / total)
        self.count = total

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / (self.std + self.EPS)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        self.update(x)
        return self.apply(x)

    # -- checkpoint plumbing -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"count": np.array([self.count]), "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.count = float(state["count"][0])
        self.mean = np.asarray(state["mean"], dtype=np.float64).copy()
        self.m2 = np.asarray(state["m2"], dtype=np.float64).copy()


class ObservationPipeline:
    """raw normalizer -> optional cosine expansion -> expanded normalizer.

    With ``expand_dim`` of None/0 the expansion stage is skipped (the
    backprop baseline consumes raw normalized observations).
    """

    def __init__(self, raw_dim: int, expand_dim: int | None):
        self.raw_dim = raw_dim
        self.expand_dim = expand_dim if expand_dim else None
        if self.expand_dim is not None and raw_dim > self.expand_dim:
            raise ConfigError(f"expand_dim {self.expand_dim} smaller than observation dim {raw_dim}")
        self.raw_norm = RunningNormalizer(raw_dim)
        self.expanded_norm = RunningNormalizer(self.expand_dim) if self.expand_dim else None

    @property
    def out_dim(self) -> int:
        return self.expand_dim if self.expand_dim else self.raw_dim

    def apply(self, obs: np.ndarray) -> np.ndarray:
        """Frozen-statistics transform used during rollouts and updates."""
        x = self.raw_norm.apply(obs)
        if self.expand_dim is None:
            return x
        return self.expanded_norm.apply(idct_expand(x, self.expand_dim))

    def update(self, raw_batch: np.ndarray) -> None:
        """Fold one rollout's raw observations into both normalizers.

        Order matters: the expanded normalizer sees the expansion of the
        raw-normalized batch under the SAME frozen raw statistics the batch
        was served with, then both advance.
        """
        x = self.raw_norm.apply(raw_batch)
        if self.expand_dim is not None:
            self.expanded_norm.update(idct_expand(x, self.expand_dim))
        self.raw_norm.update(raw_batch)

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {f"raw_{k}": v for k, v in self.raw_norm.state_arrays().items()}
        if self.expanded_norm is not None:
            state.update({f"exp_{k}": v for k, v in self.expanded_norm.state_arrays().items()})
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.raw_norm.load_state_arrays({k[4:]: v for k, v in state.items() if k.startswith("raw_")})
        if self.expanded_norm is not None:
            self.expanded_norm.load_state_arrays({k[4:]: v for k, v in state.items() if k.startswith("exp_")})
