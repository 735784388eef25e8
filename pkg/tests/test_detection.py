import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onoff import (
    BipartiteClickData,
    EfficiencyGrid,
    OffFrequencyData,
    PhotonDistribution,
    bernoulli_smear,
    bipartite_off_probabilities,
    bs_superposition_joint,
    coherent_distribution,
    design_matrix,
    multithermal_joint,
    multithermal_onoff_stats,
    off_probability,
    simulate_bipartite_clicks,
    simulate_clicks,
)
from onoff.detection import ClickSampler, simulate_bipartite_data, simulate_off_data
from onoff.exceptions import DomainError, ValidationError
from onoff.states import JointPhotonDistribution

etas_st = st.floats(1e-3, 1.0)


class TestEfficiencyGrid:
    def test_linear(self):
        g = EfficiencyGrid.linear(0.66, 30)
        assert len(g) == 30
        assert g.etas[0] == pytest.approx(0.022)
        assert g.etas[-1] == pytest.approx(0.66)

    @pytest.mark.parametrize("etas", [[0.5], [0.2, 0.2], [0.0, 0.5], [0.5, 1.1]])
    def test_invalid(self, etas):
        with pytest.raises(ValidationError):
            EfficiencyGrid(etas)

    def test_jitter_bounds(self):
        g = EfficiencyGrid.linear(0.5, 10)
        j = g.jittered(0.01, seed=3)
        assert np.all(np.abs(j.etas / g.etas - 1) <= 0.01)
        np.testing.assert_array_equal(j.etas, g.jittered(0.01, seed=3).etas)


class TestOffProbability:
    @given(eta=etas_st)
    def test_vacuum(self, eta):
        assert off_probability(PhotonDistribution.fock(0, 4), eta) == 1.0

    def test_single_photon(self):
        assert off_probability(PhotonDistribution.fock(1), 0.66) == pytest.approx(0.34, abs=1e-15)

    def test_coherent_generating_function(self):
        d = coherent_distribution(5.39, 40)
        assert off_probability(d, 0.66) == pytest.approx(math.exp(-0.66 * 5.39), abs=1e-12)

    @pytest.mark.parametrize("eta", [0.0, -0.1, 1.5, float("nan")])
    def test_domain(self, eta):
        with pytest.raises(DomainError):
            off_probability(PhotonDistribution.fock(0), eta)

    @given(
        weights=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda w: sum(w) > 1e-3),
        a=etas_st,
        b=etas_st,
    )
    def test_non_increasing(self, weights, a, b):
        d = PhotonDistribution.from_weights(weights)
        lo, hi = sorted((a, b))
        assert off_probability(d, hi) <= off_probability(d, lo) + 1e-15


class TestDesignMatrix:
    def test_first_column_ones(self):
        a = design_matrix(EfficiencyGrid.linear(0.66, 30), 20)
        assert a.shape == (30, 21)
        np.testing.assert_array_equal(a[:, 0], 1.0)

    def test_unit_efficiency_row(self):
        a = design_matrix([1.0, 0.5], 4)
        np.testing.assert_array_equal(a[0], [1, 0, 0, 0, 0])

    def test_square_vandermonde_nonsingular(self):
        etas = np.array([0.1, 0.25, 0.4, 0.6, 0.9])
        a = design_matrix(etas, 4)
        x = 1 - etas
        det_closed = np.prod([x[j] - x[i] for i, j in itertools.combinations(range(5), 2)])
        assert det_closed != 0
        assert np.linalg.det(a) == pytest.approx(det_closed, rel=1e-10)

    @given(etas=st.lists(st.floats(1e-3, 0.999), min_size=1, max_size=8), n=st.integers(1, 15))
    def test_entries_and_monotone_rows(self, etas, n):
        a = design_matrix(etas, n)
        assert np.all((a >= 0) & (a <= 1))
        assert np.all(np.diff(a, axis=1) <= 0)


class TestBipartiteProbabilities:
    def test_vacuum(self):
        vac = JointPhotonDistribution([[1.0, 0.0], [0.0, 0.0]])
        assert bipartite_off_probabilities(vac, 0.4) == (1.0, 0.0, 0.0, 0.0)

    def test_single_photon_unit_efficiency(self):
        p = bipartite_off_probabilities(bs_superposition_joint(0.5), 1.0)
        np.testing.assert_allclose(p, (0.0, 0.5, 0.5, 0.0), atol=1e-15)

    def test_multithermal_closed_form(self):
        joint = multithermal_joint(2.0, 1, 80, 0.5)
        p = bipartite_off_probabilities(joint, 0.25)
        q = multithermal_onoff_stats(2.0, 1, 0.5, 0.25)
        np.testing.assert_allclose(p[:3], q, atol=1e-10)

    @pytest.mark.parametrize("modes,tau", [(2, 0.5), (3, 0.6)])
    def test_multithermal_general(self, modes, tau):
        joint = multithermal_joint(1.5, modes, 80, tau)
        for eta in (0.1, 0.5, 1.0):
            p = bipartite_off_probabilities(joint, eta)
            np.testing.assert_allclose(p[:3], multithermal_onoff_stats(1.5, modes, tau, eta), atol=1e-10)

    @given(w=st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9).filter(lambda w: sum(w) > 1e-3), eta=etas_st)
    def test_sums_to_one(self, w, eta):
        j = JointPhotonDistribution.from_weights(np.reshape(w, (3, 3)))
        p = bipartite_off_probabilities(j, eta)
        assert abs(sum(p) - 1.0) <= 1e-12
        assert all(-1e-12 <= x <= 1 + 1e-12 for x in p)


class TestMultithermalStats:
    def test_zero_efficiency_limit(self):
        p00, p01, p10 = multithermal_onoff_stats(3.0, 2, 0.5, 1e-12)
        assert p00 == pytest.approx(1.0)
        assert p01 == pytest.approx(0.0, abs=1e-10)
        assert p10 == pytest.approx(0.0, abs=1e-10)

    def test_symmetric_split(self):
        _, p01, p10 = multithermal_onoff_stats(3.0, 4, 0.5, 0.3)
        assert p01 == p10

    def test_hand_values(self):
        p00, p01, p10 = multithermal_onoff_stats(4.0, 1, 0.5, 0.25)
        assert p00 == pytest.approx(0.5, abs=1e-15)
        assert p01 == pytest.approx(1 / 6, abs=1e-15)
        assert p10 == pytest.approx(1 / 6, abs=1e-15)

    def test_array_input(self):
        out = multithermal_onoff_stats(2.0, 2, 0.5, np.array([0.1, 0.2]))
        assert all(np.shape(x) == (2,) for x in out)


class TestBernoulliSmear:
    def test_unit_efficiency_identity(self):
        d = coherent_distribution(2.0, 10)
        np.testing.assert_allclose(bernoulli_smear(d, 1.0).probs, d.probs, atol=1e-15)

    def test_single_photon(self):
        s = bernoulli_smear(PhotonDistribution.fock(1), 0.66)
        np.testing.assert_allclose(s.probs, [0.34, 0.66], atol=1e-15)

    def test_poisson_thinning(self):
        s = bernoulli_smear(coherent_distribution(5.39, 50), 0.4)
        np.testing.assert_allclose(s.probs, coherent_distribution(0.4 * 5.39, 50).probs, atol=1e-12)

    @given(
        weights=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=15).filter(lambda w: sum(w) > 1e-3),
        eta=etas_st,
    )
    def test_normalization_and_mean(self, weights, eta):
        d = PhotonDistribution.from_weights(weights)
        s = bernoulli_smear(d, eta)
        assert abs(s.probs.sum() - 1.0) <= 1e-12
        assert s.mean() <= eta * d.mean() + 1e-10


class TestSampling:
    def test_extremes(self):
        assert simulate_clicks(1.0, 1000, seed=1) == 1000
        assert simulate_clicks(0.0, 1000, seed=1) == 0

    def test_binomial_band(self):
        n = 10**6
        assert abs(simulate_clicks(0.5, n, seed=7) / n - 0.5) <= 0.002

    def test_zero_runs_rejected(self):
        with pytest.raises(DomainError):
            simulate_clicks(0.5, 0, seed=1)

    def test_reproducible(self):
        assert simulate_clicks(0.3, 10**5, seed=11) == simulate_clicks(0.3, 10**5, seed=11)
        a = simulate_bipartite_clicks(0.5, 0.2, 0.2, 10**5, seed=5)
        assert a == simulate_bipartite_clicks(0.5, 0.2, 0.2, 10**5, seed=5)
        assert sum(a) <= 10**5

    def test_bipartite_frequencies(self):
        n00, n01, n10 = simulate_bipartite_clicks(0.4, 0.3, 0.2, 10**6, seed=2)
        np.testing.assert_allclose(np.array([n00, n01, n10]) / 1e6, [0.4, 0.3, 0.2], atol=0.003)

    def test_sampler_streams(self):
        grid = EfficiencyGrid.linear(0.5, 5)
        d = coherent_distribution(2.0, 15)
        a = simulate_off_data(d, grid, 1000, seed=4)
        b = simulate_off_data(d, grid, 1000, seed=4)
        np.testing.assert_array_equal(a.off_counts, b.off_counts)
        c = simulate_bipartite_data(bs_superposition_joint(0.5), grid, 1000, seed=4)
        assert isinstance(c, BipartiteClickData)

    def test_invalid_probability(self):
        with pytest.raises(DomainError):
            ClickSampler(0).off_counts(1.5, 10)


class TestClickData:
    def test_off_counts_above_runs_rejected(self):
        with pytest.raises(ValidationError, match="record 1"):
            OffFrequencyData([0.2, 0.4], [10, 10], [3, 11])

    def test_frequencies(self):
        d = OffFrequencyData([0.2, 0.4], [10, 20], [5, 5])
        np.testing.assert_allclose(d.frequencies, [0.5, 0.25])

    def test_bipartite_sum_bound(self):
        with pytest.raises(ValidationError, match="record 0"):
            BipartiteClickData([0.5], [10], [5], [4], [3])

    def test_bipartite_negative(self):
        with pytest.raises(ValidationError):
            BipartiteClickData([0.5], [10], [5], [-1], [3])

    def test_n11_and_stacking(self):
        d = BipartiteClickData([0.3, 0.6], [10, 20], [5, 8], [2, 4], [1, 2])
        np.testing.assert_allclose(d.n11, [2, 6])
        np.testing.assert_allclose(d.stacked_frequencies(), [0.5, 0.4, 0.2, 0.2, 0.1, 0.1])
