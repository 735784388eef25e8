"""Maximum-likelihood reconstruction of photon statistics from off frequencies.

Two multiplicative updates are available.

``"linpos"``
    rho_n <- rho_n sum_mu [A_mun / sum_lambda A_lambdan] f_mu / p_mu, followed
    by renormalization.  This is the EM iteration of the linear-positive
    model in which the off frequencies f_mu are matched to the normalized
    off probabilities l_mu = p_mu / sum_nu p_nu; it ascends
    ``linpos_log_likelihood``.  It is the default.

``"binomial"``
    The EM iteration for the full binomial likelihood of off *and* on
    counts; it ascends ``log_likelihood``.

Both share the same fixed point whenever the data are exactly reproducible
by some distribution on the truncated space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .detection import OffFrequencyData, design_matrix
from .exceptions import DegenerateModelError, DomainError, ValidationError
from .states import JointPhotonDistribution, PhotonDistribution

logger = logging.getLogger(__name__)

UPDATE_RULES = ("linpos", "binomial")

# floor for model probabilities that underflow where nothing was observed
_P_FLOOR = 1e-300


@dataclass
class EmConfig:
    """Settings for an EM reconstruction run.

    ``init`` is ``"uniform"`` or a starting distribution (a
    PhotonDistribution / JointPhotonDistribution or a plain array).
    ``update`` selects the multiplicative rule; for joint reconstructions
    ``"binomial"`` means the four-outcome multinomial EM.
    """

    truncation: int
    max_iterations: int = 100_000
    epsilon_threshold: float = 1e-7
    init: object = "uniform"
    record_every: int = 1
    stall_tolerance: float = 1e-12
    stall_window: int = 100
    update: str = "linpos"

    def __post_init__(self):
        if int(self.truncation) != self.truncation or self.truncation < 0:
            raise ValidationError("truncation must be a non-negative integer")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not self.epsilon_threshold > 0 or not self.stall_tolerance > 0:
            raise ValidationError("thresholds must be positive")
        if self.record_every < 1 or self.stall_window < 1:
            raise ValidationError("record_every and stall_window must be >= 1")
        if self.update not in UPDATE_RULES:
            raise ValidationError(f"update must be one of {UPDATE_RULES}, got {self.update!r}")


@dataclass
class ReconstructionReport:
    """Outcome of an EM run.

    Traces hold one entry per recorded iteration (``iteration_trace`` gives
    the iteration numbers, starting at 1).  ``loglik_trace`` is the
    objective the chosen update ascends (named in ``likelihood``).
    ``fisher_variances`` uses ``inf`` for entries with vanishing Fisher
    information; ``unbounded`` lists their indices.
    """

    distribution: object
    iterations_used: int
    converged: bool
    stop_reason: str
    likelihood: str
    iteration_trace: np.ndarray
    epsilon_trace: np.ndarray
    loglik_trace: np.ndarray
    fidelity_trace: np.ndarray | None
    fisher_variances: np.ndarray
    log_likelihood: float
    underdetermined: bool = False
    diagnostics: list = field(default_factory=list)

    @property
    def non_converged(self):
        return not self.converged

    @property
    def unbounded(self):
        return np.flatnonzero(~np.isfinite(self.fisher_variances)).tolist()

    @property
    def epsilon(self):
        return float(self.epsilon_trace[-1]) if self.epsilon_trace.size else float("nan")


def _as_vector(dist):
    if isinstance(dist, (PhotonDistribution, JointPhotonDistribution)):
        return np.asarray(dist.probs, dtype=float).ravel()
    return np.asarray(dist, dtype=float).ravel()


def _weighted_log_sum(counts, probs):
    """sum c log p with 0 log 0 = 0; -inf when p = 0 carries c > 0."""
    mask = counts > 0
    if np.any(probs[mask] <= 0):
        return -np.inf
    return float(counts[mask] @ np.log(probs[mask]))


class _EMProblem:
    """Linear positive model shared by single-mode and joint reconstructions.

    ``rows`` maps the unknown vector to the modelled off-type probabilities
    matched against ``freqs`` (A for one mode, B for two).  ``outcomes`` and
    ``counts`` describe every measurement outcome, complements included,
    for the full multinomial likelihood.
    """

    def __init__(self, rows, freqs, outcomes, counts, runs, etas, n_settings):
        self.rows = rows
        self.freqs = freqs
        self.outcomes = outcomes
        self.counts = counts
        self.total_runs = float(runs.sum())
        self.mean_runs = float(runs.mean())
        self.etas = etas
        self.n_settings = n_settings
        col = rows.sum(axis=0)
        self.col_sums = col
        self.weights = rows / np.where(col > 0, col, 1.0)
        self.clamped = 0

    def model(self, r):
        return self.rows @ r

    def _ratio(self, g):
        bad = (g <= 0) & (self.freqs > 0)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            eta = self.etas[idx % self.etas.size]
            raise DegenerateModelError(
                f"model off probability vanishes at eta={eta:.6g} where the observed "
                f"frequency is {self.freqs[idx]:.3g}",
                eta=eta,
            )
        under = g <= 0
        if np.any(under):
            self.clamped += int(under.sum())
            g = np.where(under, _P_FLOOR, g)
        return self.freqs / g

    def step_linpos(self, r, g=None):
        if g is None:
            g = self.model(r)
        r = r * (self.weights.T @ self._ratio(g))
        return r / r.sum()

    def step_full(self, r, g=None):
        g = self.outcomes @ r
        bad = (g <= 0) & (self.counts > 0)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            eta = self.etas[idx % self.etas.size]
            raise DegenerateModelError(
                f"model assigns zero probability to an observed outcome at eta={eta:.6g}", eta=eta
            )
        under = g <= 0
        if np.any(under):
            self.clamped += int(under.sum())
            g = np.where(under, _P_FLOOR, g)
        r = r * (self.outcomes.T @ (self.counts / g)) / self.total_runs
        return r / r.sum()

    def epsilon(self, r, g=None):
        if g is None:
            g = self.model(r)
        return float(np.mean(np.abs(self.freqs - g)))

    def linpos_loglik(self, r):
        g = self.model(r)
        total = g.sum()
        if total <= 0:
            return -np.inf
        return self.mean_runs * _weighted_log_sum(self.freqs, g / total)

    def full_loglik(self, r):
        return _weighted_log_sum(self.counts, np.clip(self.outcomes @ r, 0.0, 1.0))

    def linpos_derivatives(self, r):
        """d l_mu / d r_p for l = rows r / sum(rows r)."""
        g = self.model(r)
        total = g.sum()
        return self.rows / total - np.outer(g, self.col_sums) / total**2

    def fisher_information(self, r):
        g = self.model(r)
        total = g.sum()
        ell = g / total
        deriv = self.linpos_derivatives(r)
        keep = ell > _P_FLOOR
        return (deriv[keep] ** 2 / ell[keep, None]).sum(axis=0)

    def fisher_variances(self, r):
        info = self.fisher_information(r)
        scale = info.max() if info.size and info.max() > 0 else 1.0
        with np.errstate(divide="ignore"):
            var = 1.0 / (self.n_settings * info)
        var[info <= 1e-14 * scale] = np.inf
        return var


def single_mode_problem(data, truncation):
    if not isinstance(data, OffFrequencyData):
        raise ValidationError("expected OffFrequencyData")
    a = design_matrix(data.eta, truncation)
    return _EMProblem(
        rows=a,
        freqs=data.frequencies,
        outcomes=np.vstack([a, 1.0 - a]),
        counts=np.concatenate([data.off_counts, data.runs - data.off_counts]),
        runs=data.runs,
        etas=data.eta,
        n_settings=len(data),
    )


def _distribution_like(vec, template_shape, tail=0.0):
    if template_shape is None:
        return PhotonDistribution.from_weights(vec, tail)
    return JointPhotonDistribution.from_weights(vec.reshape(template_shape), tail)


def em_step(current, data, design=None, rule="linpos"):
    """One multiplicative update of the photon distribution.

    Parameters
    ----------
    current : PhotonDistribution
        Estimate at iteration i; must give p_mu > 0 wherever f_mu > 0.
    data : OffFrequencyData
    design : ndarray, optional
        Design matrix (1 - eta_mu)^n; built from ``data`` when omitted.
    rule : {"linpos", "binomial"}

    Returns
    -------
    PhotonDistribution
        Estimate at iteration i+1, renormalized.
    """
    r = _as_vector(current)
    problem = single_mode_problem(data, r.size - 1)
    if design is not None:
        problem = _with_rows(problem, design)
    if rule == "linpos":
        r = problem.step_linpos(r)
    elif rule == "binomial":
        r = problem.step_full(r)
    else:
        raise DomainError(f"unknown update rule {rule!r}")
    return PhotonDistribution.from_weights(r)


def error_parameter(dist, data, design=None):
    """Mean absolute gap K^-1 sum_mu |f_mu - p_mu|."""
    r = _as_vector(dist)
    a = design_matrix(data.eta, r.size - 1) if design is None else np.asarray(design)
    return float(np.mean(np.abs(data.frequencies - a @ r)))


def fidelity(a, b):
    """Bhattacharyya overlap sum sqrt(a_n b_n); shorter input is zero-padded."""
    x, y = _as_vector(a), _as_vector(b)
    if isinstance(a, JointPhotonDistribution) or isinstance(b, JointPhotonDistribution):
        x, y = _pad_joint(a, b)
    n = max(x.size, y.size)
    x = np.pad(x, (0, n - x.size))
    y = np.pad(y, (0, n - y.size))
    return float(np.sum(np.sqrt(np.clip(x, 0, None) * np.clip(y, 0, None))))


def _pad_joint(a, b):
    na, nb = a.truncation, b.truncation
    n = max(na, nb)
    return a.padded(n).flat(), b.padded(n).flat()


def log_likelihood(dist, data):
    """Binomial log-likelihood sum_mu [n0 log p + (n - n0) log(1 - p)]."""
    r = _as_vector(dist)
    return single_mode_problem(data, r.size - 1).full_loglik(r)


def linpos_log_likelihood(dist, data):
    """Objective of the linpos update: mean(n_mu) sum_mu f_mu log(p_mu / sum_nu p_nu)."""
    r = _as_vector(dist)
    return single_mode_problem(data, r.size - 1).linpos_loglik(r)


def linpos_derivatives(dist, data, design=None):
    """Jacobian d l_mu / d rho_n of the normalized off probabilities."""
    r = _as_vector(dist)
    problem = single_mode_problem(data, r.size - 1)
    if design is not None:
        problem = _with_rows(problem, design)
    return problem.linpos_derivatives(r)


def _with_rows(problem, rows):
    rows = np.asarray(rows, dtype=float)
    problem.rows = rows
    problem.col_sums = rows.sum(axis=0)
    problem.weights = rows / np.where(problem.col_sums > 0, problem.col_sums, 1.0)
    return problem


def fisher_variances(dist, data, design=None):
    """Asymptotic variances sigma_n^2 = 1 / (K F_n).

    Entries whose Fisher information vanishes are returned as ``inf``.
    Rows with zero model probability are left out of the sum.
    """
    r = _as_vector(dist)
    problem = single_mode_problem(data, r.size - 1)
    if design is not None:
        problem = _with_rows(problem, design)
    return problem.fisher_variances(r)


def _initial_vector(init, size):
    if isinstance(init, str):
        if init != "uniform":
            raise ValidationError(f"unknown init {init!r}")
        return np.full(size, 1.0 / size)
    r = _as_vector(init)
    if r.size != size:
        raise ValidationError(f"initial distribution has {r.size} entries, expected {size}")
    if np.any(r < 0) or not r.sum() > 0:
        raise ValidationError("initial distribution must be non-negative with positive mass")
    return r / r.sum()


def run_em(problem, config, reference=None, shape=None):
    """Iterate the configured update on ``problem`` and collect diagnostics."""
    size = problem.rows.shape[1]
    r = _initial_vector(config.init, size)
    ref = None if reference is None else _as_vector(reference)
    if ref is not None and ref.size != size:
        raise ValidationError("reference has a different truncation than the reconstruction")
    step = problem.step_linpos if config.update == "linpos" else problem.step_full
    objective = problem.linpos_loglik if config.update == "linpos" else problem.full_loglik

    its, eps_tr, ll_tr, fid_tr = [], [], [], []
    eps_hist = []
    stop_reason = "max_iterations"
    converged = False
    i = 0
    g = problem.model(r)
    for i in range(1, config.max_iterations + 1):
        r = step(r, g)
        g = problem.model(r)
        eps = problem.epsilon(r, g)
        eps_hist.append(eps)
        if i % config.record_every == 0 or i == 1:
            its.append(i)
            eps_tr.append(eps)
            ll_tr.append(objective(r))
            if ref is not None:
                fid_tr.append(float(np.sum(np.sqrt(ref * r))))
        if eps < config.epsilon_threshold:
            stop_reason, converged = "epsilon", True
        elif i > config.stall_window and abs(eps - eps_hist[-1 - config.stall_window]) < config.stall_tolerance:
            stop_reason, converged = "stall", True
        if converged:
            break
        if len(eps_hist) > 2 * config.stall_window:
            del eps_hist[: config.stall_window]
    if not its or its[-1] != i:
        its.append(i)
        eps_tr.append(problem.epsilon(r))
        ll_tr.append(objective(r))
        if ref is not None:
            fid_tr.append(float(np.sum(np.sqrt(ref * r))))

    diagnostics = []
    if problem.clamped:
        diagnostics.append(f"clamped {problem.clamped} underflowing model probabilities at {_P_FLOOR:g}")
    if not converged:
        logger.info("EM stopped at max_iterations=%d without meeting a convergence test", i)
    return dict(
        vector=r,
        iterations_used=i,
        converged=converged,
        stop_reason=stop_reason,
        likelihood=config.update,
        iteration_trace=np.asarray(its, dtype=int),
        epsilon_trace=np.asarray(eps_tr),
        loglik_trace=np.asarray(ll_tr),
        fidelity_trace=None if ref is None else np.asarray(fid_tr),
        fisher_variances=problem.fisher_variances(r),
        log_likelihood=problem.full_loglik(r),
        diagnostics=diagnostics,
    )


def em_reconstruct(data, config, reference=None):
    """Reconstruct a photon distribution from off-frequency data.

    Iterates until the error parameter drops below
    ``config.epsilon_threshold``, the error parameter stalls (change below
    ``stall_tolerance`` across ``stall_window`` steps) or
    ``max_iterations`` is reached.  Hitting the iteration cap is reported
    through ``converged=False``, never raised.
    """
    if not isinstance(data, OffFrequencyData) or len(data) == 0:
        raise DomainError("em_reconstruct needs non-empty OffFrequencyData")
    problem = single_mode_problem(data, config.truncation)
    out = run_em(problem, config, reference)
    vec = out.pop("vector")
    underdetermined = np.unique(data.eta).size < config.truncation + 1
    if underdetermined:
        out["diagnostics"].append(
            f"underdetermined: {np.unique(data.eta).size} distinct efficiencies for "
            f"{config.truncation + 1} unknowns"
        )
    return ReconstructionReport(
        distribution=PhotonDistribution.from_weights(vec),
        underdetermined=underdetermined,
        **out,
    )
