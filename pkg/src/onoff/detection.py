"""On/off detection model and Monte Carlo click sampling.

A binary detector of quantum efficiency eta stays silent on n photons with
probability (1 - eta)^n.  The functions below give the resulting exact
click probabilities and draw synthetic click counts from them.

Random numbers come from numpy's PCG64 bit generator
(``numpy.random.default_rng(seed)``); every sampler takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .exceptions import DomainError, ValidationError
from .states import JointPhotonDistribution, PhotonDistribution


def _check_eta(eta):
    eta = float(eta)
    if not 0.0 < eta <= 1.0:
        raise DomainError(f"quantum efficiency must lie in (0, 1], got {eta!r}")
    return eta


@dataclass(frozen=True)
class EfficiencyGrid:
    """Distinct quantum efficiencies eta_1..eta_K in (0, 1]."""

    etas: np.ndarray

    def __post_init__(self):
        etas = np.array(self.etas, dtype=float).ravel()
        if etas.size < 2:
            raise ValidationError("an efficiency grid needs at least two settings")
        if np.any(~np.isfinite(etas)) or etas.min() <= 0.0 or etas.max() > 1.0:
            raise ValidationError("efficiencies must lie in (0, 1]")
        if np.unique(etas).size != etas.size:
            raise ValidationError("efficiencies must be pairwise distinct")
        etas.flags.writeable = False
        object.__setattr__(self, "etas", etas)

    @classmethod
    def linear(cls, eta_max, n_settings):
        """eta_max/K, 2 eta_max/K, ..., eta_max."""
        eta_max = _check_eta(eta_max)
        return cls(np.linspace(eta_max / n_settings, eta_max, n_settings))

    def __len__(self):
        return self.etas.size

    def jittered(self, relative, seed):
        """Multiply every efficiency by an independent factor in 1 +/- relative."""
        rng = np.random.default_rng(seed)
        factors = 1.0 + rng.uniform(-relative, relative, size=self.etas.size)
        return EfficiencyGrid(np.clip(self.etas * factors, 1e-12, 1.0))


@dataclass(frozen=True)
class OffFrequencyData:
    """Per-efficiency off counts: (eta_mu, n_mu, n_0mu).

    Counts are stored as floats so that expected (noise-free) counts can be
    represented alongside sampled integer ones.
    """

    eta: np.ndarray
    runs: np.ndarray
    off_counts: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).ravel()
        runs = np.array(self.runs, dtype=float).ravel()
        off = np.array(self.off_counts, dtype=float).ravel()
        if not eta.size == runs.size == off.size:
            raise ValidationError("eta, runs and off_counts must have equal length")
        if eta.size == 0:
            raise ValidationError("no records")
        for i in range(eta.size):
            if not (np.isfinite(eta[i]) and 0.0 < eta[i] <= 1.0):
                raise ValidationError(f"record {i}: eta={eta[i]:g} outside (0, 1]", record=i)
            if not runs[i] > 0:
                raise ValidationError(f"record {i}: runs must be positive, got {runs[i]:g}", record=i)
            if not 0.0 <= off[i] <= runs[i]:
                raise ValidationError(
                    f"record {i}: off_counts={off[i]:g} outside [0, runs={runs[i]:g}]", record=i
                )
        for arr in (eta, runs, off):
            arr.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "off_counts", off)

    @classmethod
    def from_probabilities(cls, etas, p_off, runs=1.0):
        """Noise-free data whose frequencies equal the given probabilities."""
        etas = np.asarray(etas, dtype=float)
        runs = np.broadcast_to(np.asarray(runs, dtype=float), etas.shape)
        return cls(etas, runs, np.clip(p_off, 0.0, 1.0) * runs)

    @property
    def frequencies(self):
        return self.off_counts / self.runs

    def records(self):
        return list(zip(self.eta.tolist(), self.runs.tolist(), self.off_counts.tolist()))

    def __len__(self):
        return self.eta.size


@dataclass(frozen=True)
class BipartiteClickData:
    """Per-efficiency two-detector counts (eta, n_mu, n00, n01, n10).

    ``n01`` counts runs with the first detector off and the second on.
    """

    eta: np.ndarray
    runs: np.ndarray
    n00: np.ndarray
    n01: np.ndarray
    n10: np.ndarray

    def __post_init__(self):
        arrays = {
            name: np.array(getattr(self, name), dtype=float).ravel()
            for name in ("eta", "runs", "n00", "n01", "n10")
        }
        sizes = {a.size for a in arrays.values()}
        if len(sizes) != 1:
            raise ValidationError("all columns must have equal length")
        if arrays["eta"].size == 0:
            raise ValidationError("no records")
        eta, runs = arrays["eta"], arrays["runs"]
        for i in range(eta.size):
            if not (np.isfinite(eta[i]) and 0.0 < eta[i] <= 1.0):
                raise ValidationError(f"record {i}: eta={eta[i]:g} outside (0, 1]", record=i)
            if not runs[i] > 0:
                raise ValidationError(f"record {i}: runs must be positive", record=i)
            counts = [arrays[k][i] for k in ("n00", "n01", "n10")]
            if min(counts) < 0:
                raise ValidationError(f"record {i}: negative count", record=i)
            if sum(counts) > runs[i] * (1 + 1e-12):
                raise ValidationError(f"record {i}: n00+n01+n10 exceeds runs={runs[i]:g}", record=i)
        for name, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_probabilities(cls, etas, p00, p01, p10, runs=1.0):
        etas = np.asarray(etas, dtype=float)
        runs = np.broadcast_to(np.asarray(runs, dtype=float), etas.shape)
        return cls(etas, runs, np.asarray(p00) * runs, np.asarray(p01) * runs, np.asarray(p10) * runs)

    @property
    def n11(self):
        return np.clip(self.runs - self.n00 - self.n01 - self.n10, 0.0, None)

    def stacked_frequencies(self):
        """h = (f00 block, f01 block, f10 block), length 3K."""
        return np.concatenate([self.n00, self.n01, self.n10]) / np.tile(self.runs, 3)

    def __len__(self):
        return self.eta.size


def off_probability(dist, eta):
    """p_0(eta) = sum_n (1 - eta)^n rho_n."""
    eta = _check_eta(eta)
    probs = dist.probs if isinstance(dist, PhotonDistribution) else np.asarray(dist, dtype=float)
    powers = (1.0 - eta) ** np.arange(probs.size)
    return float(np.clip(powers @ probs, 0.0, 1.0))


def design_matrix(etas, truncation):
    """K x (N+1) matrix with entries (1 - eta_mu)^n."""
    etas = etas.etas if isinstance(etas, EfficiencyGrid) else np.asarray(etas, dtype=float).ravel()
    if etas.size and (etas.min() <= 0.0 or etas.max() > 1.0):
        raise DomainError("efficiencies must lie in (0, 1]")
    # 0.0 ** 0 == 1, so the eta=1 row comes out as (1, 0, 0, ...)
    return (1.0 - etas)[:, None] ** np.arange(truncation + 1)[None, :]


def bipartite_off_probabilities(joint, eta):
    """(p00, p01, p10, p11) for two identical detectors of efficiency eta."""
    eta = _check_eta(eta)
    probs = joint.probs if isinstance(joint, JointPhotonDistribution) else np.asarray(joint)
    a = (1.0 - eta) ** np.arange(probs.shape[0])
    p00 = float(a @ probs @ a)
    p01 = float(a @ probs @ (1.0 - a))
    p10 = float((1.0 - a) @ probs @ a)
    p11 = 1.0 - p00 - p01 - p10
    return p00, p01, p10, p11


def multithermal_onoff_stats(n_ave, modes, transmittance, eta):
    """Closed-form (p00, p01, p10) for multithermal light split at a beam splitter.

    Accepts scalar or array ``eta``; eta = 0 is allowed here as a limit.
    """
    eta = np.asarray(eta, dtype=float)
    if n_ave <= 0 or modes < 1:
        raise DomainError("n_ave must be > 0 and modes >= 1")
    m = float(modes)
    p00 = (m / (m + eta * n_ave)) ** m
    p01 = (m / (m + eta * transmittance * n_ave)) ** m - p00
    p10 = (m / (m + eta * (1.0 - transmittance) * n_ave)) ** m - p00
    if p00.ndim == 0:
        return float(p00), float(p01), float(p10)
    return p00, p01, p10


def bernoulli_matrix(eta, n_rows, n_cols):
    """M_{k,n}(eta) = C(n,k) eta^k (1-eta)^(n-k), k < n_rows, n < n_cols."""
    k = np.arange(n_rows)[:, None]
    n = np.arange(n_cols)[None, :]
    if eta == 1.0:
        return (k == n).astype(float)
    return binom.pmf(k, n, eta)


def bernoulli_smear(dist, eta):
    """Detected-count distribution P_k = sum_n M_{k,n}(eta) p_n."""
    eta = _check_eta(eta)
    n = dist.probs.size
    smeared = bernoulli_matrix(eta, n, n) @ dist.probs
    return PhotonDistribution.from_weights(smeared, dist.tail_mass)


def _check_runs(total_runs):
    if int(total_runs) != total_runs or total_runs <= 0:
        raise DomainError(f"total_runs must be a positive integer, got {total_runs!r}")
    return int(total_runs)


class ClickSampler:
    """Seeded source of synthetic click counts.

    Owns its generator state; do not share one instance between threads.
    """

    def __init__(self, seed):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def off_counts(self, p_off, total_runs):
        total_runs = _check_runs(total_runs)
        p_off = np.asarray(p_off, dtype=float)
        if np.any((p_off < 0) | (p_off > 1)):
            raise DomainError("p_off must lie in [0, 1]")
        return self.rng.binomial(total_runs, p_off)

    def bipartite_counts(self, p00, p01, p10, total_runs):
        total_runs = _check_runs(total_runs)
        probs = np.array([p00, p01, p10, 1.0 - p00 - p01 - p10], dtype=float)
        if probs.min() < -1e-12:
            raise DomainError("outcome probabilities must be non-negative")
        probs = np.clip(probs, 0.0, None)
        n00, n01, n10, _ = self.rng.multinomial(total_runs, probs / probs.sum())
        return int(n00), int(n01), int(n10)


def simulate_clicks(p_off, total_runs, seed):
    """Binomial number of off events out of ``total_runs``."""
    return int(ClickSampler(seed).off_counts(p_off, total_runs))


def simulate_bipartite_clicks(p00, p01, p10, total_runs, seed):
    """Multinomial (n00, n01, n10) over the four two-detector outcomes."""
    return ClickSampler(seed).bipartite_counts(p00, p01, p10, total_runs)


def simulate_off_data(dist, grid, total_runs, seed):
    """Sample an OffFrequencyData set for ``dist`` on every efficiency of ``grid``."""
    etas = grid.etas if isinstance(grid, EfficiencyGrid) else np.asarray(grid, dtype=float)
    p_off = design_matrix(etas, dist.truncation) @ dist.probs
    counts = ClickSampler(seed).off_counts(np.clip(p_off, 0.0, 1.0), total_runs)
    return OffFrequencyData(etas, np.full(etas.size, float(total_runs)), counts)


def simulate_bipartite_data(probabilities, grid, total_runs, seed):
    """Sample BipartiteClickData.

    ``probabilities`` is either a JointPhotonDistribution or a callable
    mapping an efficiency to (p00, p01, p10).
    """
    etas = grid.etas if isinstance(grid, EfficiencyGrid) else np.asarray(grid, dtype=float)
    sampler = ClickSampler(seed)
    rows = []
    for eta in etas:
        if isinstance(probabilities, JointPhotonDistribution):
            p00, p01, p10, _ = bipartite_off_probabilities(probabilities, eta)
        else:
            p00, p01, p10 = probabilities(eta)
        rows.append(sampler.bipartite_counts(p00, p01, p10, total_runs))
    rows = np.array(rows, dtype=float)
    return BipartiteClickData(etas, np.full(etas.size, float(total_runs)), rows[:, 0], rows[:, 1], rows[:, 2])
