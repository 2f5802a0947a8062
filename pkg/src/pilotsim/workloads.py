"""Synthetic task-duration generators with long-tailed distributions.

The docking-style workloads use a clipped lognormal: samples are drawn from
lognormal(mu, sigma) and clipped into [min_clip, max_clip].  Given a target
post-clip mean, the free parameter (sigma, or mu when sigma is pinned) is
solved by bisection on the closed-form clipped-mean equation.
"""

import math
from dataclasses import dataclass, replace

import numpy as np


def _phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def clipped_lognormal_mean(mu, sigma, lo, hi):
    """E[clip(X, lo, hi)] for X ~ lognormal(mu, sigma), closed form."""
    a = (math.log(lo) - mu) / sigma
    b = (math.log(hi) - mu) / sigma
    body = math.exp(mu + sigma * sigma / 2.0) * (_phi(b - sigma) - _phi(a - sigma))
    return lo * _phi(a) + body + hi * (1.0 - _phi(b))


def _bisect(fn, lo, hi, tol=1e-12, iters=200):
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if abs(hi - lo) < tol * max(1.0, abs(mid)):
            return mid
        if (flo < 0) == (fmid < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_sigma(mean, lo, hi):
    """Sigma such that the clipped mean hits `mean`, with mu fixed at the
    geometric center of the clip window."""
    mu = 0.5 * (math.log(lo) + math.log(hi))
    gm = math.exp(mu)
    if not gm <= mean <= 0.5 * (lo + hi):
        raise ValueError('target mean %.4g outside attainable range [%.4g, %.4g]'
                         % (mean, gm, 0.5 * (lo + hi)))
    err = lambda s: clipped_lognormal_mean(mu, s, lo, hi) - mean
    sigma = _bisect(err, 1e-9, 30.0, tol=1e-9)
    return mu, sigma


def solve_mu(mean, sigma, lo, hi):
    """Mu such that the clipped mean hits `mean` for a pinned sigma."""
    err = lambda m: clipped_lognormal_mean(m, sigma, lo, hi) - mean
    lo_mu, hi_mu = math.log(lo) - 5 * sigma, math.log(hi) + 5 * sigma
    return _bisect(err, lo_mu, hi_mu, tol=1e-9)


@dataclass(frozen=True)
class DurationModel:
    """Seeded task-duration generator; immutable, safe to share."""
    kind: str = 'constant'           # constant | lognormal-truncated | empirical-table
    mean: float = None               # target post-clip mean (lognormal)
    sigma: float = None              # pinned log-sigma; solved from mean if None
    min_clip: float = None
    max_clip: float = None
    constant: float = None           # seconds (constant kind)
    samples: tuple = None            # empirical-table pool
    seed: int = 0

    def __post_init__(self):
        if self.kind == 'constant':
            if self.constant is None or self.constant < 0:
                raise ValueError('constant duration must be >= 0')
        elif self.kind == 'lognormal-truncated':
            if None in (self.mean, self.min_clip, self.max_clip):
                raise ValueError('lognormal model needs mean and clips')
            if not 0 < self.min_clip <= self.mean <= self.max_clip:
                raise ValueError('need 0 < min_clip <= mean <= max_clip')
        elif self.kind == 'empirical-table':
            if not self.samples:
                raise ValueError('empirical table must be non-empty')
            if any(s < 0 for s in self.samples):
                raise ValueError('durations must be >= 0')
        else:
            raise ValueError('unknown duration model kind: %s' % self.kind)

    def sample(self, n, seed=None):
        """Draw n durations (seconds); deterministic per seed."""
        if n < 1:
            raise ValueError('n must be >= 1')
        rng = np.random.default_rng(self.seed if seed is None else seed)
        if self.kind == 'constant':
            return np.full(n, float(self.constant))
        if self.kind == 'empirical-table':
            pool = np.asarray(self.samples, dtype=float)
            return pool[rng.integers(0, len(pool), size=n)]
        if self.sigma is None:
            mu, sigma = solve_sigma(self.mean, self.min_clip, self.max_clip)
        else:
            sigma = self.sigma
            mu = solve_mu(self.mean, sigma, self.min_clip, self.max_clip)
        raw = rng.lognormal(mean=mu, sigma=sigma, size=n)
        return np.clip(raw, self.min_clip, self.max_clip)

    def expected_mean(self):
        if self.kind == 'constant':
            return float(self.constant)
        if self.kind == 'empirical-table':
            return float(np.mean(self.samples))
        return float(self.mean)

    def scaled(self, factor):
        """Rescale the time axis (mean and clips) by `factor`."""
        if self.kind == 'constant':
            return replace(self, constant=self.constant * factor)
        if self.kind == 'empirical-table':
            return replace(self, samples=tuple(s * factor for s in self.samples))
        return replace(self, mean=self.mean * factor,
                       min_clip=self.min_clip * factor,
                       max_clip=self.max_clip * factor)


def sample_durations(model, n, seed=None):
    return model.sample(n, seed=seed)


@dataclass(frozen=True)
class WorkloadPreset:
    name: str
    item_count: int
    model: DurationModel
    bundle_size: int = 1
    cores: int = 1              # per rank
    gpus: int = 0
    ranks: int = 1

    def __post_init__(self):
        if self.item_count < 1:
            raise ValueError('item_count must be >= 1')
        if self.bundle_size < 1:
            raise ValueError('bundle_size must be >= 1')


# Docking-time statistics (seconds): long-tailed, clipped lognormal fits.
_PRESETS = {
    # CPU docking, one ligand per core-task
    'wf1-uc1': dict(item_count=10_000, bundle_size=1, cores=1,
                    model=DurationModel(kind='lognormal-truncated',
                                        mean=28.8, min_clip=0.1, max_clip=3582.6)),
    'wf1-uc2': dict(item_count=10_000, bundle_size=1, cores=1,
                    model=DurationModel(kind='lognormal-truncated',
                                        mean=25.1, min_clip=0.1, max_clip=833.1)),
    # GPU docking, 16 ligands bundled into one GPU computation
    'wf1-uc3': dict(item_count=10_000, bundle_size=16, cores=1, gpus=1,
                    model=DurationModel(kind='lognormal-truncated',
                                        mean=36.2, min_clip=0.1, max_clip=263.9)),
    # GPU-resident MD-style task: 1 GPU + 1 core
    'wf3': dict(item_count=512, bundle_size=1, cores=1, gpus=1,
                model=DurationModel(kind='constant', constant=320.0)),
    # CPU-resident MPI task: 36 single-core ranks
    'wf4': dict(item_count=32, bundle_size=1, cores=1, ranks=36,
                model=DurationModel(kind='constant', constant=320.0)),
}


def make_preset(name, item_count=None, seed=None):
    if name not in _PRESETS:
        raise KeyError('unknown workload preset: %s' % name)
    spec = dict(_PRESETS[name])
    if item_count is not None:
        spec['item_count'] = item_count
    if seed is not None:
        spec['model'] = replace(spec['model'], seed=seed)
    return WorkloadPreset(name=name, **spec)


def preset_names():
    return sorted(_PRESETS)
