"""Joint photon-number reconstruction for two modes read by two on/off detectors.

The joint distribution varrho_{nk} is flattened to q_p with the one-based
index p = 1 + k + n (N+1).  Storage is zero-based (row-major), reports
carry the one-based index.
"""

from __future__ import annotations

import numpy as np

from .detection import BipartiteClickData, EfficiencyGrid, design_matrix
from .em import EmConfig, ReconstructionReport, _EMProblem, _as_vector, run_em
from .exceptions import DomainError, ValidationError
from .states import JointPhotonDistribution


def flat_index(n, k, truncation):
    """One-based p for the pair (n, k)."""
    return 1 + k + n * (1 + truncation)


def pair_index(p, truncation):
    """Inverse of ``flat_index``."""
    if not 1 <= p <= (truncation + 1) ** 2:
        raise DomainError(f"flat index {p} outside 1..{(truncation + 1) ** 2}")
    k = (p - 1) % (1 + truncation)
    n = (p - 1 - k) // (1 + truncation)
    return n, k


def build_b_matrix(grid, truncation):
    """3K x (N+1)^2 matrix mapping q to (p00 block, p01 block, p10 block)."""
    etas = grid.etas if isinstance(grid, EfficiencyGrid) else np.asarray(grid, dtype=float).ravel()
    a = design_matrix(etas, truncation)
    k_settings = etas.size
    on = 1.0 - a
    blocks = [
        np.einsum("un,uk->unk", a, a),
        np.einsum("un,uk->unk", a, on),
        np.einsum("un,uk->unk", on, a),
    ]
    return np.vstack([b.reshape(k_settings, -1) for b in blocks])


def _p11_rows(grid, truncation):
    etas = grid.etas if isinstance(grid, EfficiencyGrid) else np.asarray(grid, dtype=float).ravel()
    on = 1.0 - design_matrix(etas, truncation)
    return np.einsum("un,uk->unk", on, on).reshape(etas.size, -1)


def joint_problem(data, truncation):
    if not isinstance(data, BipartiteClickData):
        raise ValidationError("expected BipartiteClickData")
    b = build_b_matrix(data.eta, truncation)
    return _EMProblem(
        rows=b,
        freqs=data.stacked_frequencies(),
        outcomes=np.vstack([b, _p11_rows(data.eta, truncation)]),
        counts=np.concatenate([data.n00, data.n01, data.n10, data.n11]),
        runs=data.runs,
        etas=data.eta,
        n_settings=len(data),
    )


def stacked_probabilities(joint, grid):
    """g = B q for a joint distribution."""
    q = _as_vector(joint)
    truncation = int(round(np.sqrt(q.size))) - 1
    return build_b_matrix(grid, truncation) @ q


def joint_log_likelihood(joint, data):
    """Multinomial log-likelihood over the four two-detector outcomes."""
    q = _as_vector(joint)
    truncation = int(round(np.sqrt(q.size))) - 1
    return joint_problem(data, truncation).full_loglik(q)


def joint_error_parameter(joint, data):
    """(3K)^-1 sum_mu |h_mu - g_mu|."""
    q = _as_vector(joint)
    truncation = int(round(np.sqrt(q.size))) - 1
    return joint_problem(data, truncation).epsilon(q)


def em_step_joint(current, data, rule="linpos"):
    """One multiplicative update of the joint distribution."""
    q = _as_vector(current)
    n = int(round(np.sqrt(q.size))) - 1
    problem = joint_problem(data, n)
    if rule == "linpos":
        q = problem.step_linpos(q)
    elif rule == "binomial":
        q = problem.step_full(q)
    else:
        raise DomainError(f"unknown update rule {rule!r}")
    return JointPhotonDistribution.from_weights(q.reshape(n + 1, n + 1))


def em_reconstruct_joint(data, config, reference=None):
    """EM reconstruction of varrho_{nk} from (n00, n01, n10) counts.

    ``config.update == "linpos"`` iterates the 3K-row multiplicative rule;
    ``"binomial"`` the four-outcome multinomial EM.  The error parameter
    always uses the 3K off-type rows.
    """
    if not isinstance(data, BipartiteClickData) or len(data) == 0:
        raise DomainError("em_reconstruct_joint needs non-empty BipartiteClickData")
    n = config.truncation
    problem = joint_problem(data, n)
    ref = None
    if reference is not None:
        if reference.truncation > n:
            raise ValidationError("reference truncation exceeds the reconstruction truncation")
        ref = reference.padded(n)
    out = run_em(problem, config, ref)
    vec = out.pop("vector")
    equations = 3 * np.unique(data.eta).size
    underdetermined = equations < (n + 1) ** 2
    if underdetermined:
        out["diagnostics"].append(
            f"underdetermined: {equations} off-type rows for {(n + 1) ** 2} unknowns"
        )
    return ReconstructionReport(
        distribution=JointPhotonDistribution.from_weights(vec.reshape(n + 1, n + 1)),
        underdetermined=underdetermined,
        **out,
    )


def normalized_derivatives_joint(joint, data):
    """d d_mu / d q_p for d = B q / sum(B q)."""
    q = _as_vector(joint)
    return joint_problem(data, int(round(np.sqrt(q.size))) - 1).linpos_derivatives(q)


def fisher_variances_joint(joint, data):
    """sigma_p^2 = 1 / (K F_p) with F_p summed over the 3K rows; inf where F_p = 0."""
    q = _as_vector(joint)
    return joint_problem(data, int(round(np.sqrt(q.size))) - 1).fisher_variances(q)


__all__ = [
    "EmConfig",
    "ReconstructionReport",
    "build_b_matrix",
    "em_reconstruct_joint",
    "em_step_joint",
    "fisher_variances_joint",
    "flat_index",
    "joint_error_parameter",
    "joint_log_likelihood",
    "normalized_derivatives_joint",
    "pair_index",
    "stacked_probabilities",
]
