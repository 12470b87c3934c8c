"""Gaussian and lognormal random fields with Whittle-Matern covariance.

Realizations are sampled at cell midpoints of a :class:`FineGrid` by circulant
embedding.  Every FFT of the embedding yields two independent realizations
(real and imaginary part); realization ``i`` of a seed stream is the real part
of draw ``i // 2`` for even ``i`` and the imaginary part for odd ``i``, where
draw ``k`` uses the generator spawned with key ``(k,)`` from the stream seed.
Realization ``i`` is therefore reproducible on its own.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .besselk import k1, kv_quad
from .grid import FineGrid

EMBED_TOL = 1e-10
MAX_PADDING = 4
KAPPA_BRANCH = 1 << 20


class EmbeddingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    nu: float
    kappa: float

    def __post_init__(self):
        for name in ("sigma2", "nu", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class HierarchicalParams:
    sigma2: float
    nu: float
    kappa_low: float
    kappa_high: float

    def __post_init__(self):
        if not 0 < self.kappa_low <= self.kappa_high:
            raise ValueError(
                f"need 0 < kappa_low <= kappa_high, got [{self.kappa_low}, {self.kappa_high}]")
        if not (self.sigma2 > 0 and self.nu > 0):
            raise ValueError("sigma2 and nu must be positive")

    def with_kappa(self, kappa: float) -> MaternParams:
        return MaternParams(self.sigma2, self.nu, kappa)


@dataclass
class FieldRealization:
    grid: FineGrid
    values: np.ndarray  # (n, n) cell values, row index = y
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("gaussian", "lognormal"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.n, self.grid.n)


def matern_cov(p: MaternParams, r):
    """Whittle-Matern covariance at distance(s) ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    out = np.full(r.shape, float(p.sigma2))
    pos = r > 0
    if pos.any():
        s = math.sqrt(2.0 * p.nu) * r[pos] / p.kappa
        if p.nu == 1.0:
            val = s * k1(s)
        else:
            val = s ** p.nu * kv_quad(p.nu, s) / (2.0 ** (p.nu - 1.0) * math.gamma(p.nu))
        out[pos] = p.sigma2 * val
    return out if out.ndim else float(out)


def _periodic_lags(size: int) -> np.ndarray:
    k = np.arange(size)
    return np.minimum(k, size - k)


@lru_cache(maxsize=32)
def _embedding(p: MaternParams, m: int, spacing: float) -> np.ndarray:
    """Square roots of the circulant eigenvalues scaled for direct FFT sampling."""
    worst = None
    factor = 1
    while factor <= MAX_PADDING:
        size = 2 * m * factor
        factor *= 2
        lag = _periodic_lags(size) * spacing
        dist = np.hypot(lag[:, None], lag[None, :])
        base = matern_cov(p, dist)
        lam = np.fft.fft2(base).real
        top = lam.max()
        if lam.min() >= -EMBED_TOL * top:
            lam = np.maximum(lam, 0.0)
            out = np.sqrt(lam / lam.size)
            out.setflags(write=False)
            return out
        worst = lam.min()
    raise EmbeddingError(
        f"embedding failed: most negative eigenvalue {worst:.3e} at padding x{MAX_PADDING}")


def child_seed(seed, *keys: int) -> np.random.SeedSequence:
    """Seed sequence for sub-stream ``keys`` of ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(seed, spawn_key=keys)


def _stream(seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *keys))


def sample_gaussian(p: MaternParams, grid: FineGrid, seed, index: int = 0) -> FieldRealization:
    """Realization ``index`` of the centred Gaussian field for seed stream ``seed``."""
    m = grid.n
    root = _embedding(p, m, grid.h)
    rng = _stream(seed, index // 2)
    shape = root.shape
    xi = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = np.fft.fft2(root * xi)
    part = y.real if index % 2 == 0 else y.imag
    meta = {"sigma2": p.sigma2, "nu": p.nu, "kappa": p.kappa, "index": index,
            "seed": _seed_repr(seed)}
    return FieldRealization(grid, part[:m, :m].copy(), "gaussian", meta)


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return seed


def to_lognormal(z: FieldRealization) -> FieldRealization:
    if z.kind != "gaussian":
        raise ValueError("to_lognormal expects a gaussian field")
    return FieldRealization(z.grid, np.exp(z.values), "lognormal", dict(z.meta))


def draw_kappa(hp: HierarchicalParams, seed, index: int = 0) -> float:
    # separate branch of the seed tree, independent of the field draws
    if hp.kappa_high == hp.kappa_low:
        return float(hp.kappa_low)
    return float(_stream(seed, KAPPA_BRANCH, index).uniform(hp.kappa_low, hp.kappa_high))


def sample_hierarchical_gaussian(hp: HierarchicalParams, grid: FineGrid, seed, index: int = 0):
    """``(kappa, Z)`` with ``kappa ~ U[kappa_low, kappa_high]`` and ``Z`` given kappa.

    Each realization uses the real part of its own FFT draw so that fields
    with different kappa never share an embedding draw.
    """
    kappa = draw_kappa(hp, seed, index)
    z = sample_gaussian(hp.with_kappa(kappa), grid, seed, 2 * index)
    z.meta["index"] = index
    return kappa, z


def sample_hierarchical(hp: HierarchicalParams, grid: FineGrid, seed, index: int = 0):
    """``(kappa, exp(Z))`` for the hierarchical field; see :func:`sample_hierarchical_gaussian`."""
    kappa, z = sample_hierarchical_gaussian(hp, grid, seed, index)
    a = to_lognormal(z)
    a.meta["index"] = index
    return kappa, a


def contrast(a: FieldRealization | np.ndarray) -> float:
    values = a.values if isinstance(a, FieldRealization) else np.asarray(a)
    if isinstance(a, FieldRealization) and a.kind != "lognormal":
        raise ValueError("contrast is defined for lognormal (positive) fields")
    lo = values.min()
    if not lo > 0:
        raise ValueError("contrast requires strictly positive values")
    return float(values.max() / lo)
