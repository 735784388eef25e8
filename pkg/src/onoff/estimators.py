"""scikit-learn style front ends for the reconstruction routines.

The estimators take tabular inputs: ``X`` holds the measurement settings
(efficiencies, or phase/efficiency pairs), ``y`` the observed off counts,
and ``runs`` the number of trials per row.  After ``fit`` the reconstructed
state is exposed through trailing-underscore attributes and ``predict``
returns modelled off probabilities for new settings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bipartite import em_reconstruct_joint, stacked_probabilities
from .detection import BipartiteClickData, OffFrequencyData, design_matrix
from .em import EmConfig, em_reconstruct
from .exceptions import ValidationError
from .full_rho import PhaseScanData, displaced_fock_probabilities, reconstruct_density_matrix


def _settings_1d(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValidationError("expected a single column of efficiencies")
        X = X[:, 0]
    return X


def _runs_like(runs, n):
    if runs is None:
        return np.ones(n)
    runs = np.broadcast_to(np.asarray(runs, dtype=float), (n,))
    return np.array(runs)


class _EMParams:
    def _config(self, truncation):
        return EmConfig(
            truncation=truncation,
            max_iterations=self.max_iter,
            epsilon_threshold=self.tol,
            init=self.init,
            update=self.update,
            stall_tolerance=self.stall_tol,
            stall_window=self.stall_window,
            record_every=self.record_every,
        )


class PhotonNumberEM(_EMParams, BaseEstimator):
    """Single-mode photon-number reconstruction.

    Parameters
    ----------
    truncation : int
        Largest photon number N kept.
    max_iter, tol : int, float
        Iteration cap and error-parameter threshold.
    update : {"linpos", "binomial"}
    init : "uniform" or array_like
    stall_tol, stall_window : float, int
        Stop when the error parameter moves less than ``stall_tol`` over
        ``stall_window`` iterations.
    record_every : int
        Trace sampling interval.
    """

    def __init__(
        self,
        truncation=20,
        max_iter=100_000,
        tol=1e-7,
        update="linpos",
        init="uniform",
        stall_tol=1e-12,
        stall_window=100,
        record_every=1,
    ):
        self.truncation = truncation
        self.max_iter = max_iter
        self.tol = tol
        self.update = update
        self.init = init
        self.stall_tol = stall_tol
        self.stall_window = stall_window
        self.record_every = record_every

    def fit(self, X, y, runs=None, reference=None):
        """Fit from efficiencies ``X`` and off counts ``y``.

        Without ``runs`` the targets are read as off frequencies.
        """
        etas = _settings_1d(X)
        off = check_array(y, ensure_2d=False, dtype=float).ravel()
        data = OffFrequencyData(etas, _runs_like(runs, etas.size), off)
        self.report_ = em_reconstruct(data, self._config(self.truncation), reference)
        self.distribution_ = self.report_.distribution
        self.probs_ = self.distribution_.probs
        self.n_iter_ = self.report_.iterations_used
        self.converged_ = self.report_.converged
        self.fisher_variances_ = self.report_.fisher_variances
        return self

    def predict(self, X):
        """Off probabilities p_0(eta) of the fitted distribution."""
        check_is_fitted(self, "probs_")
        return design_matrix(_settings_1d(X), self.truncation) @ self.probs_

    def score(self, X, y, runs=None):
        """Negative mean absolute gap between off frequencies and the model."""
        freqs = check_array(y, ensure_2d=False, dtype=float).ravel()
        if runs is not None:
            freqs = freqs / _runs_like(runs, freqs.size)
        return -float(np.mean(np.abs(freqs - self.predict(X))))


class JointPhotonNumberEM(_EMParams, BaseEstimator):
    """Two-mode joint photon-number reconstruction.

    ``y`` has three columns (n00, n01, n10) per efficiency.
    """

    def __init__(
        self,
        truncation=2,
        max_iter=100_000,
        tol=1e-7,
        update="linpos",
        init="uniform",
        stall_tol=1e-12,
        stall_window=100,
        record_every=1,
    ):
        self.truncation = truncation
        self.max_iter = max_iter
        self.tol = tol
        self.update = update
        self.init = init
        self.stall_tol = stall_tol
        self.stall_window = stall_window
        self.record_every = record_every

    def fit(self, X, y, runs=None, reference=None):
        etas = _settings_1d(X)
        counts = check_array(y, dtype=float)
        if counts.shape != (etas.size, 3):
            raise ValidationError("y must have shape (n_settings, 3): n00, n01, n10")
        data = BipartiteClickData(etas, _runs_like(runs, etas.size), *counts.T)
        self.report_ = em_reconstruct_joint(data, self._config(self.truncation), reference)
        self.distribution_ = self.report_.distribution
        self.probs_ = self.distribution_.probs
        self.n_iter_ = self.report_.iterations_used
        self.converged_ = self.report_.converged
        self.fisher_variances_ = self.report_.fisher_variances
        return self

    def predict(self, X):
        """(p00, p01, p10) per efficiency, shape (n_settings, 3)."""
        check_is_fitted(self, "probs_")
        etas = _settings_1d(X)
        return stacked_probabilities(self.probs_, etas).reshape(3, etas.size).T


class DensityMatrixTomography(BaseEstimator):
    """Density-matrix reconstruction from a phase scan of on/off data.

    ``X`` has two columns (phase, eta); rows sharing a phase form one
    block.  Phases must be equally spaced over the circle.
    """

    def __init__(
        self,
        magnitude=0.1,
        n0=8,
        s_max=2,
        truncation=None,
        eta_max=None,
        max_iter=100_000,
        tol=1e-7,
        update="linpos",
    ):
        self.magnitude = magnitude
        self.n0 = n0
        self.s_max = s_max
        self.truncation = truncation
        self.eta_max = eta_max
        self.max_iter = max_iter
        self.tol = tol
        self.update = update

    def _em_truncation(self):
        return 2 * self.n0 + 4 if self.truncation is None else self.truncation

    def fit(self, X, y, runs=None, reference=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValidationError("X must have two columns: phase, eta")
        off = check_array(y, ensure_2d=False, dtype=float).ravel()
        runs = _runs_like(runs, off.size)
        keys = np.round(np.mod(X[:, 0], 2 * np.pi), 12)
        phases = np.unique(keys)
        blocks = tuple(
            OffFrequencyData(X[keys == ph, 1], runs[keys == ph], off[keys == ph]) for ph in phases
        )
        scan = PhaseScanData(self.magnitude, phases, blocks)
        config = EmConfig(
            truncation=self._em_truncation(),
            max_iterations=self.max_iter,
            epsilon_threshold=self.tol,
            update=self.update,
        )
        self.density_, self.report_ = reconstruct_density_matrix(
            scan, self.n0, self.s_max, config, self.eta_max, reference
        )
        self.density_matrix_ = self.density_.elements
        return self

    def predict(self, X):
        """Off probabilities of the fitted state at each (phase, eta) row."""
        check_is_fitted(self, "density_matrix_")
        X = check_array(X, dtype=float)
        eff = 1.0 if self.eta_max is None else self.eta_max
        top = self._em_truncation() + 20
        out = np.empty(X.shape[0])
        for i, (phase, eta) in enumerate(X):
            p = displaced_fock_probabilities(self.density_, self.magnitude * np.exp(1j * phase), top)
            out[i] = ((1.0 - eff * eta) ** np.arange(top + 1)) @ p
        return out
