"""Quantum states on a truncated Fock space.

The generators here produce the ground truths used by the simulators and
the reconstruction tests: Poissonian and thermal photon statistics, the
two-mode multithermal law behind a beam splitter, the single-photon
beam-splitter superposition, and coherent/thermal density matrices.

Every generator renormalizes over the truncated space and records the
probability mass that fell outside it as ``tail_mass``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .exceptions import DomainError, ValidationError

_SUM_TOL = 1e-9


def _check_truncation(truncation):
    if int(truncation) != truncation or truncation < 0:
        raise DomainError(f"truncation must be a non-negative integer, got {truncation!r}")
    return int(truncation)


def _check_mean(value, name="mean_photons"):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PhotonDistribution:
    """Photon-number distribution rho_0..rho_N.

    Parameters
    ----------
    probs : array_like
        Non-negative probabilities indexed by photon number, summing to one.
    tail_mass : float
        Mass that the untruncated law puts above ``N`` (diagnostic only).
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float).ravel()
        if probs.size == 0:
            raise ValidationError("distribution must have at least one entry")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("distribution contains non-finite entries")
        if probs.min() < -_SUM_TOL:
            raise ValidationError(f"negative probability {probs.min():.3g}")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise ValidationError(f"probabilities sum to {probs.sum():.12g}, not 1")
        probs = np.clip(probs, 0.0, None)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights, tail_mass=0.0):
        """Normalize non-negative weights into a distribution."""
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise ValidationError("weights must have positive sum")
        return cls(weights / total, tail_mass)

    @classmethod
    def fock(cls, n, truncation=None):
        """The number state |n>."""
        truncation = n if truncation is None else truncation
        if not 0 <= n <= truncation:
            raise DomainError("photon number outside the truncated space")
        probs = np.zeros(truncation + 1)
        probs[n] = 1.0
        return cls(probs)

    @property
    def truncation(self):
        return self.probs.size - 1

    def mean(self):
        return float(np.arange(self.probs.size) @ self.probs)

    def padded(self, truncation):
        """Zero-pad (never truncate) to a larger Fock space."""
        if truncation < self.truncation:
            raise DomainError("cannot pad to a smaller truncation")
        probs = np.zeros(truncation + 1)
        probs[: self.probs.size] = self.probs
        return PhotonDistribution(probs, self.tail_mass)

    def __len__(self):
        return self.probs.size


@dataclass(frozen=True)
class DensityMatrix:
    """Single-mode density matrix in the Fock basis, indices 0..N."""

    elements: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        rho = np.array(self.elements, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("density matrix contains non-finite entries")
        if np.abs(rho - rho.conj().T).max() > _SUM_TOL:
            raise ValidationError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > _SUM_TOL:
            raise ValidationError(f"trace is {np.trace(rho).real:.12g}, not 1")
        if np.diag(rho).real.min() < -_SUM_TOL:
            raise ValidationError("negative diagonal entry")
        rho.flags.writeable = False
        object.__setattr__(self, "elements", rho)

    @property
    def truncation(self):
        return self.elements.shape[0] - 1

    def diagonal(self):
        diag = np.clip(np.diag(self.elements).real, 0.0, None)
        return PhotonDistribution.from_weights(diag, self.tail_mass)

    def subdiagonal(self, s):
        """Elements <m+s|rho|m> for m = 0..N-s."""
        return np.diagonal(self.elements, offset=-s).copy()

    def purity(self):
        return float(np.trace(self.elements @ self.elements).real)

    def padded(self, truncation):
        if truncation < self.truncation:
            raise DomainError("cannot pad to a smaller truncation")
        rho = np.zeros((truncation + 1, truncation + 1), dtype=complex)
        n = self.elements.shape[0]
        rho[:n, :n] = self.elements
        return DensityMatrix(rho, self.tail_mass)


@dataclass(frozen=True)
class JointPhotonDistribution:
    """Two-mode photon-number distribution varrho_{nk} on an (N+1)x(N+1) grid."""

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise ValidationError(f"joint distribution must be square, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("joint distribution contains non-finite entries")
        if probs.min() < -_SUM_TOL:
            raise ValidationError(f"negative probability {probs.min():.3g}")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise ValidationError(f"probabilities sum to {probs.sum():.12g}, not 1")
        probs = np.clip(probs, 0.0, None)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights, tail_mass=0.0):
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise ValidationError("weights must have positive sum")
        return cls(weights / total, tail_mass)

    @property
    def truncation(self):
        return self.probs.shape[0] - 1

    def flat(self):
        """Row-major vector q_p, p-1 = k + n (N+1)."""
        return self.probs.ravel().copy()

    def marginals(self):
        return self.probs.sum(axis=1), self.probs.sum(axis=0)

    def padded(self, truncation):
        if truncation < self.truncation:
            raise DomainError("cannot pad to a smaller truncation")
        probs = np.zeros((truncation + 1, truncation + 1))
        n = self.probs.shape[0]
        probs[:n, :n] = self.probs
        return JointPhotonDistribution(probs, self.tail_mass)


def coherent_distribution(mean_photons, truncation):
    """Poissonian photon statistics with the given mean."""
    lam = _check_mean(mean_photons)
    truncation = _check_truncation(truncation)
    n = np.arange(truncation + 1)
    if lam == 0:
        return PhotonDistribution.fock(0, truncation)
    weights = poisson.pmf(n, lam)
    tail = float(poisson.sf(truncation, lam))
    return PhotonDistribution.from_weights(weights, tail)


def thermal_distribution(mean_photons, truncation):
    """Bose-Einstein (geometric) statistics with mean ``mean_photons``."""
    nth = _check_mean(mean_photons)
    truncation = _check_truncation(truncation)
    if nth == 0:
        return PhotonDistribution.fock(0, truncation)
    n = np.arange(truncation + 1)
    ratio = nth / (1.0 + nth)
    weights = ratio**n / (1.0 + nth)
    tail = float(ratio ** (truncation + 1))
    return PhotonDistribution.from_weights(weights, tail)


def multithermal_log_weights(n_ave, modes, truncation, transmittance=0.5):
    """Log of the unnormalized two-mode multithermal law on the grid.

    An M-mode thermal beam with total mean ``n_ave`` is split by a beam
    splitter; the first index receives each photon with probability
    ``transmittance``.
    """
    n = np.arange(truncation + 1)
    s = n[:, None] + n[None, :]
    log_tau = np.log(transmittance) if transmittance > 0 else -np.inf
    log_rest = np.log1p(-transmittance) if transmittance < 1 else -np.inf
    with np.errstate(invalid="ignore"):
        split = np.where(n[:, None] > 0, n[:, None] * log_tau, 0.0) + np.where(
            n[None, :] > 0, n[None, :] * log_rest, 0.0
        )
    return (
        gammaln(s + modes)
        - gammaln(n + 1)[:, None]
        - gammaln(n + 1)[None, :]
        - gammaln(modes)
        - modes * np.log1p(n_ave / modes)
        - s * np.log1p(modes / n_ave)
        + split
    )


def multithermal_joint(n_ave, modes, truncation, transmittance=0.5):
    """Joint photon distribution of multithermal light behind a beam splitter.

    varrho_{nm} = (n+m+M-1)! / (n! m! (M-1)!) (1 + n_ave/M)^-M
    (1 + M/n_ave)^-(n+m) tau^n (1-tau)^m, evaluated through log-gamma and
    renormalized over the truncated grid.
    """
    n_ave = float(n_ave)
    if not np.isfinite(n_ave) or n_ave <= 0:
        raise DomainError(f"n_ave must be finite and > 0, got {n_ave!r}")
    if int(modes) != modes or modes < 1:
        raise DomainError(f"modes must be a positive integer, got {modes!r}")
    if not 0.0 <= transmittance <= 1.0:
        raise DomainError("transmittance must lie in [0, 1]")
    truncation = _check_truncation(truncation)
    weights = np.exp(multithermal_log_weights(n_ave, int(modes), truncation, transmittance))
    tail = max(0.0, 1.0 - float(weights.sum()))
    return JointPhotonDistribution.from_weights(weights, tail)


def bs_superposition_joint(transmittance):
    """sqrt(tau)|0>|1> + sqrt(1-tau)|1>|0>, on the N=1 grid."""
    tau = float(transmittance)
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"transmittance must lie in [0, 1], got {tau!r}")
    probs = np.zeros((2, 2))
    probs[0, 1] = tau
    probs[1, 0] = 1.0 - tau
    return JointPhotonDistribution(probs)


def coherent_density_matrix(amplitude, truncation):
    """|z><z| truncated to 0..N and renormalized."""
    truncation = _check_truncation(truncation)
    z = complex(amplitude)
    if not np.isfinite(z):
        raise DomainError("amplitude must be finite")
    n = np.arange(truncation + 1)
    if z == 0:
        amps = (n == 0).astype(complex)
    else:
        log_mag = n * np.log(abs(z)) - 0.5 * gammaln(n + 1) - 0.5 * abs(z) ** 2
        amps = np.exp(log_mag) * np.exp(1j * n * np.angle(z))
    captured = float(np.sum(np.abs(amps) ** 2))
    rho = np.outer(amps, amps.conj()) / captured
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, max(0.0, 1.0 - captured))


def thermal_density_matrix(mean_photons, truncation):
    """Diagonal density matrix carrying thermal statistics."""
    dist = thermal_distribution(mean_photons, truncation)
    return DensityMatrix(np.diag(dist.probs).astype(complex), dist.tail_mass)


def fock_density_matrix(n, truncation):
    return DensityMatrix(np.diag(PhotonDistribution.fock(n, truncation).probs).astype(complex))
