"""Black-box base generators.

Anything with ``schema`` and ``sample(n, rng) -> ndarray`` (raw units) can be
wrapped. External generators (CTGAN, TVAE, TabDDPM, ...) plug in through a
CSV sample file plus schema sidecar; two deliberately imperfect built-ins let
the pipeline run without them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .data import ColumnSchema, DataError, Provenance, Table, read_csv


class Sampler:
    kind = "abstract"
    schema: tuple[ColumnSchema, ...]
    relaxed: bool = False

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def sample_table(self, n: int, rng: np.random.Generator) -> Table:
        return Table(self.schema, self.sample(n, rng), Provenance.BASE_SYNTHETIC, self.relaxed)


class GaussianCopulaSampler(Sampler):
    kind = "copula"

    def __init__(self, schema, marginals: list[np.ndarray], binary_mean: np.ndarray,
                 corr: np.ndarray, degenerate: np.ndarray):
        self.schema = tuple(schema)
        self.marginals = marginals
        self.binary_mean = binary_mean
        self.corr = corr
        self.degenerate = degenerate
        w, v = np.linalg.eigh(corr)
        self._root = v * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = len(self.schema)
        z = rng.standard_normal((n, d)) @ self._root.T
        u = ndtr(z)
        out = np.empty((n, d))
        for j, col in enumerate(self.schema):
            if self.degenerate[j]:
                out[:, j] = self.marginals[j][0]
            elif col.is_binary:
                out[:, j] = (u[:, j] > 1.0 - self.binary_mean[j]).astype(float)
            else:
                out[:, j] = np.quantile(self.marginals[j], u[:, j])
        return out


def fit_gaussian_copula(real: Table) -> GaussianCopulaSampler:
    """Empirical marginals glued by a Gaussian copula fitted on normal scores."""
    if real.n < 50:
        raise DataError("Gaussian copula needs at least 50 rows")
    x = real.rows
    n, d = x.shape
    degenerate = np.array([np.all(x[:, j] == x[0, j]) for j in range(d)])
    scores = np.zeros((n, d))
    for j in range(d):
        if not degenerate[j]:
            scores[:, j] = ndtri(rankdata(x[:, j]) / (n + 1))
    corr = np.eye(d)
    live = np.flatnonzero(~degenerate)
    if live.size > 1:
        corr[np.ix_(live, live)] = np.corrcoef(scores[:, live], rowvar=False)
    marginals = [np.sort(x[:, j]) for j in range(d)]
    return GaussianCopulaSampler(real.schema, marginals, x.mean(axis=0), corr, degenerate)


class NoisyBootstrapSampler(Sampler):
    kind = "bootstrap"

    def __init__(self, source: Table, noise: float):
        if noise < 0:
            raise ValueError("noise must be >= 0")
        self.schema = source.schema
        self.source = source.rows
        self.noise = noise
        self._binary = source.binary_mask
        self._std = np.where(self._binary, 0.0,
                             source.rows.std(axis=0, ddof=1) if source.n > 1 else 0.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.source.shape[0], size=n)
        out = self.source[idx].copy()
        if self.noise > 0:
            out += rng.standard_normal(out.shape) * (self.noise * self._std)
            flip = (rng.random(out.shape) < self.noise / 10.0) & self._binary
            out[flip] = 1.0 - out[flip]
        return out


def noisy_bootstrap(real: Table, noise: float) -> NoisyBootstrapSampler:
    """Row bootstrap plus Gaussian jitter (``noise * column std``) and binary flips
    with probability ``noise / 10``."""
    return NoisyBootstrapSampler(real, noise)


class FileBackedSampler(Sampler):
    """With-replacement draws from a finite pool of externally generated rows."""

    kind = "file"

    def __init__(self, pool: Table, path: str | Path | None = None):
        self.schema = pool.schema
        self.pool = pool.rows
        self.relaxed = pool.relaxed
        self.path = None if path is None else str(path)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pool[rng.integers(0, self.pool.shape[0], size=n)]


def load_samples(
    path: str | Path, schema: Sequence[ColumnSchema], relaxed: bool = False, min_pool: int = 1,
) -> FileBackedSampler:
    """Wrap a CSV of base samples. Binary columns may carry fractional values
    only when ``relaxed`` is declared."""
    schema = tuple(schema)
    pool = read_csv(path, schema=[ColumnSchema(c.name, c.kind) for c in schema],
                    provenance=Provenance.BASE_SYNTHETIC, relaxed=relaxed)
    if pool.d != len(schema):
        raise DataError(f"expected {len(schema)} columns, file has {pool.d}")
    if pool.n < min_pool:
        raise DataError(f"sample pool has {pool.n} rows, fewer than one batch ({min_pool})")
    return FileBackedSampler(pool, path)


def make_sampler(kind: str, real: Table, noise: float = 0.5, path: str | None = None,
                 relaxed: bool = False, min_pool: int = 1) -> Sampler:
    if kind == "copula":
        return fit_gaussian_copula(real)
    if kind == "bootstrap":
        return noisy_bootstrap(real, noise)
    if kind == "file":
        if path is None:
            raise DataError("file-backed base needs a sample path")
        return load_samples(path, real.schema, relaxed=relaxed, min_pool=min_pool)
    raise DataError(f"unknown base kind {kind!r}")
