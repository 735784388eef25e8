"""Density-matrix reconstruction from phase-modulated on/off data.

Mixing the signal with a local oscillator displaces it by
alpha = |alpha| e^{i phi}.  At fixed |alpha| the displaced photon
distribution p_n(phi) is a trigonometric polynomial in phi whose s-th
Fourier component is linear in the s-th subdiagonal of rho:

    p_n^(s) = sum_m G^(s)_{n,m}(|alpha|) <m+s|rho|m>.

Inverting each of these overdetermined systems by least squares yields the
diagonal and the first ``s_max`` subdiagonals; the upper triangle follows
from Hermiticity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .detection import ClickSampler, OffFrequencyData, _check_eta, bernoulli_matrix, design_matrix
from .em import EmConfig, em_reconstruct
from .exceptions import DomainError, IllConditionedError, ValidationError
from .states import DensityMatrix, PhotonDistribution

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
_ETA_TAIL_TOL = 1e-12


def _displacement_amplitudes(magnitude, n_rows, n_cols):
    """Real matrix U_{n,k} such that p_n(alpha) = sum_km U_nk U_nm rho_km e^{i(m-k)phi}.

    U_{n,k} = e^{-|a|^2/2} sqrt(n! k!) sum_j (-1)^j |a|^(n+k-2j) / (j! (n-j)! (k-j)!),
    each term formed in log space and the alternating series summed with fsum.
    """
    magnitude = float(magnitude)
    if magnitude < 0 or not np.isfinite(magnitude):
        raise DomainError("displacement magnitude must be finite and >= 0")
    if magnitude == 0.0:
        return np.eye(n_rows, n_cols)
    log_a = math.log(magnitude)
    lfact = gammaln(np.arange(max(n_rows, n_cols) + 1) + 1)
    out = np.empty((n_rows, n_cols))
    half = -0.5 * magnitude**2
    for n in range(n_rows):
        for k in range(n_cols):
            base = half + 0.5 * (lfact[n] + lfact[k])
            terms = []
            for j in range(min(n, k) + 1):
                log_t = base + (n + k - 2 * j) * log_a - lfact[j] - lfact[n - j] - lfact[k - j]
                t = math.exp(log_t)
                terms.append(-t if j % 2 else t)
            out[n, k] = math.fsum(terms)
    return out


def displaced_fock_probabilities(rho, alpha, truncation):
    """p_n(alpha) = <n,alpha| rho |n,alpha> for n = 0..truncation.

    ``rho`` lives on 0..n0 with n0 <= truncation.
    """
    elements = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    n0 = elements.shape[0] - 1
    if truncation < n0:
        raise DomainError(f"evaluation truncation {truncation} below the state truncation {n0}")
    alpha = complex(alpha)
    u = _displacement_amplitudes(abs(alpha), truncation + 1, n0 + 1)
    u = u * np.exp(1j * np.angle(alpha) * np.arange(n0 + 1))[None, :]
    probs = np.einsum("nk,km,nm->n", u.conj(), elements, u).real
    return probs


def g_matrix(s, magnitude, truncation, n0):
    """(N+1) x (n0+1-s) matrix G^(s)(|alpha|) linking p^(s) to <m+s|rho|m>."""
    if not 0 <= s <= n0:
        raise DomainError(f"sideband s={s} outside 0..n0={n0}")
    if truncation < n0:
        raise DomainError("truncation must be >= n0")
    u = _displacement_amplitudes(magnitude, truncation + 1, n0 + 1)
    return u[:, s:] * u[:, : n0 + 1 - s]


def g_matrix_eta(s, magnitude, eta, truncation, n0, extra=20):
    """Efficiency-smeared G^(s)(|alpha|, eta) = sum_k M_{n,k}(eta) G^(s)_{k,m}.

    The sum over k is cut at ``truncation + extra`` and extended until the
    last five terms contribute less than 1e-12.
    """
    eta = _check_eta(eta)
    if eta == 1.0:
        return g_matrix(s, magnitude, truncation, n0)
    while True:
        top = truncation + extra
        g_big = g_matrix(s, magnitude, top, n0)
        smear = bernoulli_matrix(eta, truncation + 1, top + 1)
        tail = np.abs(smear[:, -5:] @ g_big[-5:]).max()
        if tail < _ETA_TAIL_TOL:
            return smear @ g_big
        if extra >= 640:
            logger.warning("Bernoulli tail %.3g above tolerance at cutoff %d", tail, top)
            return smear @ g_big
        extra *= 2


def fourier_components(p_by_phase, s, phases=None):
    """Discrete Fourier coefficient N_phi^-1 sum_j p_n(phi_j) e^{i s phi_j} for every n."""
    p = np.asarray(p_by_phase, dtype=float)
    if p.ndim != 2:
        raise DomainError("p_by_phase must be N_phi x (N+1)")
    n_phi = p.shape[0]
    if phases is None:
        phases = 2.0 * np.pi * np.arange(n_phi) / n_phi
    phases = np.asarray(phases, dtype=float)
    if abs(s) > (n_phi - 1) / 2:
        raise DomainError(f"|s|={abs(s)} not resolvable with {n_phi} phases")
    return np.exp(1j * s * phases) @ p / n_phi


def condition_number(g):
    return float(np.linalg.cond(g))


def pseudo_inverse(g, max_condition=MAX_CONDITION):
    """Moore-Penrose inverse F = (G^T G)^-1 G^T of a full-column-rank G.

    Evaluated through a reduced QR factorization, F = R^-1 Q^T.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] < g.shape[1]:
        raise IllConditionedError("G must have at least as many rows as columns", np.inf)
    cond = condition_number(g)
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedError("least-squares inversion is ill conditioned", cond)
    q, r = np.linalg.qr(g, mode="reduced")
    return np.linalg.solve(r, q.T)


def _check_uniform_phases(phases):
    phases = np.asarray(phases, dtype=float)
    n_phi = phases.size
    expected = phases[0] + 2.0 * np.pi * np.arange(n_phi) / n_phi
    gap = np.angle(np.exp(1j * (phases - expected)))
    if np.abs(gap).max() > 1e-9:
        raise ValidationError("phases must be equally spaced over [0, 2 pi)")
    return phases


@dataclass(frozen=True)
class PhaseScanData:
    """Off-frequency data for every phase of the local oscillator at fixed |alpha|."""

    magnitude: float
    phases: np.ndarray
    blocks: tuple

    def __post_init__(self):
        phases = _check_uniform_phases(np.ravel(self.phases))
        if len(self.blocks) != phases.size:
            raise ValidationError("one OffFrequencyData block per phase is required")
        if self.magnitude < 0:
            raise ValidationError("magnitude must be >= 0")
        if not all(isinstance(b, OffFrequencyData) for b in self.blocks):
            raise ValidationError("blocks must be OffFrequencyData")
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def n_phases(self):
        return self.phases.size


@dataclass
class DensityReport:
    """Diagnostics of a density-matrix reconstruction.

    ``subdiagonals[s]`` holds the raw least-squares estimates of
    <m+s|rho|m> before Hermitization and trace renormalization.
    """

    density: DensityMatrix
    n0: int
    s_max: int
    condition_numbers: dict
    subdiagonals: dict
    trace_deviation: float
    diagonal_imaginary: float
    clipped_diagonal: float
    phase_reports: list = field(default_factory=list)
    delta: np.ndarray | None = None

    @property
    def converged(self):
        return all(r.converged for r in self.phase_reports)


def reconstruct_from_probabilities(p_by_phase, magnitude, n0, s_max=2, phases=None, eta=None):
    """Least-squares assembly of rho from per-phase photon distributions.

    ``p_by_phase`` is N_phi x (N+1).  With ``eta`` given the rows are the
    detected (Bernoulli-smeared) distributions and G(|alpha|, eta) is used.
    """
    p = np.asarray(p_by_phase, dtype=float)
    n_phi, width = p.shape
    truncation = width - 1
    if truncation < n0:
        raise DomainError("photon distributions must extend at least to n0")
    if not 0 <= s_max <= n0:
        raise DomainError("s_max must lie in 0..n0")
    if phases is None:
        phases = 2.0 * np.pi * np.arange(n_phi) / n_phi
    phases = _check_uniform_phases(phases)

    rho = np.zeros((n0 + 1, n0 + 1), dtype=complex)
    conds, subs = {}, {}
    for s in range(s_max + 1):
        if eta is None:
            g = g_matrix(s, magnitude, truncation, n0)
        else:
            g = g_matrix_eta(s, magnitude, eta, truncation, n0)
        f = pseudo_inverse(g)
        conds[s] = condition_number(g)
        est = f @ fourier_components(p, s, phases)
        subs[s] = est
        idx = np.arange(n0 + 1 - s)
        rho[idx + s, idx] = est
    diag = rho.diagonal().copy()
    diag_imag = float(np.abs(diag.imag).max())
    real_diag = diag.real
    clipped = float(-real_diag[real_diag < 0].sum())
    np.fill_diagonal(rho, np.clip(real_diag, 0.0, None))
    lower = np.tril(rho, -1)
    rho = lower + lower.conj().T + np.diag(rho.diagonal().real)
    trace = float(rho.diagonal().real.sum())
    if not trace > 0:
        raise ValidationError("reconstructed diagonal has no positive mass")
    rho = rho / trace
    rho = 0.5 * (rho + rho.conj().T)
    report = DensityReport(
        density=DensityMatrix(rho),
        n0=n0,
        s_max=s_max,
        condition_numbers=conds,
        subdiagonals=subs,
        trace_deviation=abs(float(real_diag.sum()) - 1.0),
        diagonal_imaginary=diag_imag,
        clipped_diagonal=clipped,
    )
    return report.density, report


def reconstruct_density_matrix(scan, n0, s_max=2, em_config=None, eta_max=None, reference=None):
    """Full pipeline: per-phase EM, Fourier components, least squares.

    Parameters
    ----------
    scan : PhaseScanData
    n0 : int
        Truncation of the reconstructed density matrix.
    s_max : int
        Highest subdiagonal reconstructed; farther ones are left at zero.
    em_config : EmConfig, optional
        Settings of the per-phase photon-number EM; its truncation N must
        be >= n0 (default N = 2 n0 + 4, traces sampled every 100 steps).
    eta_max : float, optional
        When given, efficiencies in ``scan`` are relative attenuations
        behind a detector of efficiency ``eta_max``; the EM then yields
        detected distributions and G(|alpha|, eta_max) is inverted.
    reference : DensityMatrix, optional
        Ground truth; fills ``report.delta`` with |rho_rec - rho_ref|.
    """
    if em_config is None:
        em_config = EmConfig(truncation=2 * n0 + 4, record_every=100)
    if em_config.truncation < n0:
        raise DomainError("EM truncation must be >= n0")
    phase_reports = [em_reconstruct(block, em_config) for block in scan.blocks]
    p = np.array([r.distribution.probs for r in phase_reports])
    stalled = sum(not r.converged for r in phase_reports)
    if stalled:
        logger.info("EM stopped without converging at %d of %d phases", stalled, len(phase_reports))
    density, report = reconstruct_from_probabilities(
        p, scan.magnitude, n0, s_max, scan.phases, eta=eta_max
    )
    report.phase_reports = phase_reports
    if reference is not None:
        report.delta = density_delta(density, reference)
    return density, report


def density_delta(rho, reference):
    """Elementwise |rho - reference| on the common (padded) grid."""
    n = max(rho.truncation, reference.truncation)
    return np.abs(rho.padded(n).elements - reference.padded(n).elements)


def analytic_phase_scan(rho, magnitude, n_phases, truncation):
    """Exact p_n(|alpha| e^{i phi_j}) on N_phi equally spaced phases."""
    phases = 2.0 * np.pi * np.arange(n_phases) / n_phases
    p = np.array(
        [displaced_fock_probabilities(rho, magnitude * np.exp(1j * ph), truncation) for ph in phases]
    )
    return phases, p


def simulate_phase_scan(
    rho, magnitude, n_phases, etas, total_runs, seed, truncation=None, exact=False, eta_max=1.0
):
    """Per-phase off-count data for ``rho`` displaced by |alpha| e^{i phi_j}.

    ``truncation`` bounds the photon numbers kept when evaluating the off
    probabilities (default n0 + 30, enough for |alpha| <= 2).  With
    ``eta_max`` below one the recorded ``etas`` are relative attenuations
    in front of a detector of that efficiency.
    """
    etas = np.asarray(etas, dtype=float)
    if truncation is None:
        truncation = rho.truncation + 30
    phases, p = analytic_phase_scan(rho, magnitude, n_phases, truncation)
    a = design_matrix(etas * _check_eta(eta_max), truncation)
    sampler = ClickSampler(seed)
    blocks = []
    for row in p:
        p_off = np.clip(a @ row, 0.0, 1.0)
        if exact:
            blocks.append(OffFrequencyData.from_probabilities(etas, p_off, total_runs))
        else:
            counts = sampler.off_counts(p_off, total_runs)
            blocks.append(OffFrequencyData(etas, np.full(etas.size, float(total_runs)), counts))
    return PhaseScanData(magnitude, phases, tuple(blocks))


def displaced_distribution(rho, alpha, truncation):
    """``displaced_fock_probabilities`` wrapped as a PhotonDistribution."""
    return PhotonDistribution.from_weights(np.clip(displaced_fock_probabilities(rho, alpha, truncation), 0, None))
