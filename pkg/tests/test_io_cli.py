import json
import os

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from onoff import (
    BipartiteClickData,
    EfficiencyGrid,
    EmConfig,
    OffFrequencyData,
    PhotonDistribution,
    bs_superposition_joint,
    coherent_density_matrix,
    coherent_distribution,
    em_reconstruct,
    em_reconstruct_joint,
)
from onoff import io as fio
from onoff.cli import main
from onoff.config import OUTPUT_ENV, ExperimentConfig, build_state, load_config, load_state, save_state
from onoff.detection import simulate_bipartite_data, simulate_off_data
from onoff.exceptions import ParseError, ValidationError
from onoff.full_rho import reconstruct_density_matrix, simulate_phase_scan


@st.composite
def single_data(draw):
    k = draw(st.integers(2, 8))
    etas = draw(st.lists(st.floats(1e-3, 1.0), min_size=k, max_size=k, unique=True))
    runs = draw(st.lists(st.integers(1, 10**6), min_size=k, max_size=k))
    off = [draw(st.integers(0, r)) for r in runs]
    return OffFrequencyData(etas, runs, off)


@st.composite
def bipartite_data(draw):
    k = draw(st.integers(1, 6))
    etas = draw(st.lists(st.floats(1e-3, 1.0), min_size=k, max_size=k))
    rows = []
    for _ in range(k):
        runs = draw(st.integers(1, 10**6))
        n00 = draw(st.integers(0, runs))
        n01 = draw(st.integers(0, runs - n00))
        n10 = draw(st.integers(0, runs - n00 - n01))
        rows.append((runs, n00, n01, n10))
    runs, n00, n01, n10 = zip(*rows)
    return BipartiteClickData(etas, runs, n00, n01, n10)


def assert_same_single(a, b):
    for attr in ("eta", "runs", "off_counts"):
        np.testing.assert_array_equal(getattr(a, attr), getattr(b, attr))


class TestClickDataFiles:
    @given(data=single_data())
    def test_single_round_trip(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("io") / "clicks.csv"
        fio.save_click_data(path, data)
        assert_same_single(fio.load_click_data(path), data)

    @given(data=bipartite_data())
    def test_bipartite_round_trip(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("io") / "clicks.csv"
        fio.save_click_data(path, data)
        back = fio.load_click_data(path)
        for attr in ("eta", "runs", "n00", "n01", "n10"):
            np.testing.assert_array_equal(getattr(back, attr), getattr(data, attr))

    def test_phase_scan_round_trip(self, tmp_path):
        rho = coherent_density_matrix(1.0, 4)
        scan = simulate_phase_scan(rho, 0.3, 12, EfficiencyGrid.linear(0.5, 4).etas, 1000, seed=2)
        path = fio.save_click_data(tmp_path / "scan.csv", scan)
        back = fio.load_click_data(path, scenario="full_rho")
        np.testing.assert_array_equal(back.phases, scan.phases)
        assert back.magnitude == scan.magnitude
        for x, y in zip(back.blocks, scan.blocks):
            assert_same_single(x, y)

    def test_exact_fractions_survive(self, tmp_path):
        data = OffFrequencyData.from_probabilities([0.1, 0.3], [1 / 3, 0.123456789012345678], 1.0)
        back = fio.load_click_data(fio.save_click_data(tmp_path / "c.csv", data))
        assert_same_single(back, data)

    def test_header(self, tmp_path):
        path = fio.save_click_data(tmp_path / "c.csv", OffFrequencyData([0.2, 0.4], [10, 10], [5, 3]))
        assert path.read_text().splitlines()[0] == "eta,runs,off_counts"

    def test_violation_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("eta,runs,off_counts\n0.2,10,5\n0.4,10,13\n")
        with pytest.raises(ValidationError, match="line 3"):
            fio.load_click_data(path)

    def test_non_numeric_field(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("eta,runs,off_counts\n0.2,10,5\n0.4,ten,3\n")
        with pytest.raises(ParseError) as info:
            fio.load_click_data(path)
        assert info.value.line == 3

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("eta,runs,off_counts\n0.2,10\n")
        with pytest.raises(ParseError, match="line 2"):
            fio.load_click_data(path)

    def test_unknown_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError, match="line 1"):
            fio.load_click_data(path)

    def test_bipartite_inconsistent_counts(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("eta,runs,n00,n01,n10\n0.5,10,5,4,3\n")
        with pytest.raises(ValidationError, match="line 2"):
            fio.load_click_data(path)

    def test_directory(self, tmp_path):
        (tmp_path / "a.csv").write_text("eta,runs,off_counts\n0.1,10,9\n")
        (tmp_path / "b.csv").write_text("eta,runs,off_counts\n0.5,10,4\n")
        data = fio.load_click_data(tmp_path)
        np.testing.assert_array_equal(data.eta, [0.1, 0.5])
        np.testing.assert_array_equal(data.off_counts, [9, 4])

    def test_scenario_mismatch(self, tmp_path):
        path = fio.save_click_data(tmp_path / "c.csv", OffFrequencyData([0.2, 0.4], [10, 10], [5, 3]))
        with pytest.raises(ParseError):
            fio.load_click_data(path, scenario="bipartite")


class TestReports:
    @pytest.fixture
    def single_report(self):
        truth = coherent_distribution(2.0, 8)
        data = simulate_off_data(truth, EfficiencyGrid.linear(0.66, 10), 10**4, seed=3)
        cfg = EmConfig(truncation=8, max_iterations=500, record_every=7)
        return em_reconstruct(data, cfg, truth), truth

    def test_round_trip(self, tmp_path, single_report):
        report, truth = single_report
        back, ref = fio.load_report(fio.save_report(tmp_path / "r.json", report, truth))
        np.testing.assert_array_equal(back.distribution.probs, report.distribution.probs)
        np.testing.assert_array_equal(back.fisher_variances, report.fisher_variances)
        np.testing.assert_array_equal(back.fidelity_trace, report.fidelity_trace)
        np.testing.assert_array_equal(back.iteration_trace, report.iteration_trace)
        assert back.stop_reason == report.stop_reason
        assert back.distribution.tail_mass == report.distribution.tail_mass
        np.testing.assert_array_equal(ref.probs, truth.probs)

    def test_unbounded_variances_written_as_null(self, tmp_path):
        etas = EfficiencyGrid.linear(0.9, 10).etas
        data = OffFrequencyData(etas, np.full(10, 100.0), np.full(10, 100.0))
        cfg = EmConfig(truncation=3, max_iterations=5, init=PhotonDistribution.fock(0, 3))
        report = em_reconstruct(data, cfg)
        obj = json.loads(fio.save_report(tmp_path / "r.json", report).read_text())
        assert obj["fisher_variances"][0] is None
        assert obj["fisher_unbounded"] == [0]
        back, _ = fio.load_report(tmp_path / "r.json")
        assert back.fisher_variances[0] == np.inf
        text = fio.save_distribution(tmp_path / "d.csv", report.distribution, report.fisher_variances).read_text()
        assert text.splitlines()[1].endswith(",unbounded")

    def test_traces_and_distribution_csv(self, tmp_path, single_report):
        report, _ = single_report
        lines = fio.save_traces(tmp_path / "t.csv", report).read_text().splitlines()
        assert lines[0] == "iteration,epsilon,loglik,fidelity"
        assert len(lines) - 1 == len(report.iteration_trace)
        assert int(lines[-1].split(",")[0]) == report.iterations_used
        rows = fio.save_distribution(tmp_path / "d.csv", report.distribution).read_text().splitlines()[1:]
        assert abs(sum(float(r.split(",")[1]) for r in rows) - 1.0) <= 1e-9

    def test_joint_report(self, tmp_path):
        joint = bs_superposition_joint(0.5).padded(2)
        data = simulate_bipartite_data(joint, EfficiencyGrid.linear(0.9, 8), 1000, seed=1)
        report = em_reconstruct_joint(data, EmConfig(truncation=2, max_iterations=50), joint)
        back, ref = fio.load_report(fio.save_report(tmp_path / "r.json", report, joint))
        np.testing.assert_array_equal(back.distribution.probs, report.distribution.probs)
        np.testing.assert_array_equal(ref.probs, joint.probs)
        rows = fio.save_distribution(tmp_path / "d.csv", report.distribution).read_text().splitlines()
        assert rows[0] == "p,n,k,probability,variance"
        assert rows[2].startswith("2,0,1,")
        grid = fio.save_joint_matrix(tmp_path / "j.csv", report.distribution).read_text().splitlines()
        assert len(grid) == 4

    def test_density_round_trip(self, tmp_path):
        rho = coherent_density_matrix(0.7 + 0.4j, 6)
        scan = simulate_phase_scan(rho, 0.5, 12, EfficiencyGrid.linear(0.8, 12).etas, 1e5, 0, exact=True)
        density, report = reconstruct_density_matrix(scan, 6, 2, EmConfig(truncation=10, max_iterations=200))
        path = fio.save_density(tmp_path / "rho.json", density, report, rho)
        back, ref = fio.load_density(path)
        np.testing.assert_array_equal(back.elements, density.elements)
        np.testing.assert_array_equal(ref.elements, rho.elements)
        obj = json.loads(path.read_text())
        assert set(obj["condition_numbers"]) == {"0", "1", "2"}

    def test_state_files(self, tmp_path):
        for state in (coherent_distribution(1.0, 5), bs_superposition_joint(0.6), coherent_density_matrix(0.5j, 4)):
            back = load_state(save_state(tmp_path / "s.json", state))
            assert type(back) is type(state)
            np.testing.assert_array_equal(getattr(back, "elements", getattr(back, "probs", None)),
                                          getattr(state, "elements", getattr(state, "probs", None)))


class TestAtomicWrite:
    def test_failure_keeps_original(self, tmp_path, monkeypatch):
        path = tmp_path / "out.csv"
        path.write_text("original\n")

        def boom(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            fio.atomic_write(path, "new\n")
        assert path.read_text() == "original\n"
        assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]

    def test_float_format(self):
        assert fio.fmt(3.0) == "3"
        assert float(fio.fmt(0.1 + 0.2)) == 0.1 + 0.2


class TestConfig:
    def test_yaml_and_json_equivalent(self, tmp_path):
        mapping = {
            "scenario": "single_mode",
            "state": {"kind": "coherent", "mean_photons": 2.0, "truncation": 10},
            "grid": {"eta_max": 0.6, "K": 5},
            "em": {"truncation": 10},
        }
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(mapping))
        (tmp_path / "c.json").write_text(json.dumps(mapping))
        a = load_config(tmp_path / "c.yaml")
        b = load_config(tmp_path / "c.json")
        assert a.to_dict() == b.to_dict()

    def test_dotted_overrides(self, tmp_path):
        (tmp_path / "c.yaml").write_text("scenario: single_mode\nem: {truncation: 10, max_iterations: 5}\n")
        cfg = load_config(tmp_path / "c.yaml", {"em.max_iterations": 99, "seed": None})
        assert cfg.em == {"truncation": 10, "max_iterations": 99}
        assert cfg.seed == 0

    @pytest.mark.parametrize(
        "mapping",
        [
            {"scenario": "triple"},
            {"scenario": "single_mode", "colour": 1},
            {"scenario": "single_mode", "em": {"speed": 2}},
            {"scenario": "single_mode", "state": {"file": "/nonexistent.json"}},
            {"scenario": "single_mode", "runs": 0},
        ],
    )
    def test_invalid(self, mapping):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_mapping(mapping)

    def test_env_output_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        assert ExperimentConfig(scenario="single_mode").output_dir == str(tmp_path / "env")

    def test_state_kinds(self):
        assert build_state({"kind": "fock", "n": 2}, "single_mode", 4).probs[2] == 1.0
        assert build_state({"kind": "coherent", "amplitude": [0, 1]}, "full_rho", 6).elements.shape == (7, 7)
        assert build_state({"kind": "multithermal", "n_ave": 1.0, "modes": 2}, "bipartite", 5).truncation == 5
        with pytest.raises(ValidationError):
            build_state({"kind": "squeezed"}, "single_mode")


def _write_yaml(path, mapping):
    path.write_text(yaml.safe_dump(mapping))
    return path


class TestCli:
    def _single_config(self, tmp_path, **extra):
        mapping = {
            "scenario": "single_mode",
            "state": {"kind": "coherent", "mean_photons": 2.0, "truncation": 10},
            "grid": {"eta_max": 0.66, "K": 12},
            "runs": 10000,
            "seed": 4,
            "em": {"truncation": 10, "max_iterations": 200},
            "output_dir": str(tmp_path / "out"),
            **extra,
        }
        return _write_yaml(tmp_path / "c.yaml", mapping)

    def test_simulate_is_deterministic(self, tmp_path):
        cfg = self._single_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path / "a")]) == 0
        assert main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path / "b")]) == 0
        a, b = (tmp_path / "a" / "clicks.csv").read_bytes(), (tmp_path / "b" / "clicks.csv").read_bytes()
        assert a == b
        manifest = json.loads((tmp_path / "a" / "manifest-simulate.json").read_text())
        assert manifest["config"]["seed"] == 4
        assert manifest["files"] == ["clicks.csv", "state.json"]

    def test_flags_override_config(self, tmp_path):
        cfg = self._single_config(tmp_path)
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(cfg), "--output-dir", str(out), "--settings", "5", "--seed", "9"]) == 0
        data = fio.load_click_data(out / "clicks.csv")
        assert len(data.eta) == 5
        assert json.loads((out / "manifest-simulate.json").read_text())["config"]["seed"] == 9

    def test_json_config(self, tmp_path):
        mapping = yaml.safe_load(self._single_config(tmp_path).read_text())
        path = tmp_path / "c.json"
        path.write_text(json.dumps(mapping))
        assert main(["simulate", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "clicks.csv").is_file()

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        mapping = yaml.safe_load(self._single_config(tmp_path).read_text())
        del mapping["output_dir"]
        assert main(["simulate", "--config", str(_write_yaml(tmp_path / "c.yaml", mapping))]) == 0
        assert (tmp_path / "env" / "clicks.csv").is_file()

    def test_reconstruct_outputs(self, tmp_path, capsys):
        cfg = self._single_config(tmp_path)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg)]) == 0
        rc = main(["reconstruct", "--config", str(cfg)])
        assert rc == 2
        assert "max_iterations" in capsys.readouterr().out
        for name in ("report.json", "traces.csv", "distribution.csv", "off_frequencies.csv", "manifest-reconstruct.json"):
            assert (out / name).is_file()
        report, ref = fio.load_report(out / "report.json")
        assert report.iterations_used == 200
        assert ref is not None
        traces = (out / "traces.csv").read_text().splitlines()
        assert len(traces) - 1 == len(report.iteration_trace)

    def test_converged_exit_zero(self, tmp_path):
        cfg = self._single_config(tmp_path, exact=True)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["reconstruct", "--config", str(cfg), "--epsilon", "1e-4", "--max-iterations", "100000"]) == 0

    def test_report_command(self, tmp_path):
        cfg = self._single_config(tmp_path)
        main(["simulate", "--config", str(cfg)])
        main(["reconstruct", "--config", str(cfg)])
        out = tmp_path / "out"
        (out / "traces.csv").unlink()
        assert main(["report", str(out / "report.json")]) == 0
        assert (out / "traces.csv").is_file()

    def test_invalid_data_exit_three(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("eta,runs,off_counts\n0.2,10,5\n0.4,10,13\n")
        rc = main(["reconstruct", "--data", str(bad), "--output-dir", str(tmp_path / "o")])
        assert rc == 3
        assert "line 3" in capsys.readouterr().err

    def test_bipartite_workflow(self, tmp_path):
        out = tmp_path / "bp"
        rc = main(
            ["simulate", "--scenario", "bipartite", "--settings", "8", "--eta-max-grid", "0.9",
             "--runs", "1000", "--output-dir", str(out)]
        )
        # no state given: the bipartite scenario needs one
        assert rc == 3
        cfg = _write_yaml(
            tmp_path / "bp.yaml",
            {
                "scenario": "bipartite",
                "state": {"kind": "bs", "transmittance": 0.5},
                "grid": {"eta_max": 0.9, "K": 8},
                "runs": 1000,
                "em": {"truncation": 2, "max_iterations": 100},
                "output_dir": str(out),
            },
        )
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["reconstruct", "--config", str(cfg)]) in (0, 2)
        assert (out / "joint_matrix.csv").is_file()

    def test_full_rho_workflow_and_ill_conditioned(self, tmp_path):
        mapping = {
            "scenario": "full_rho",
            "state": {"kind": "coherent", "amplitude": [0.5, 0.0], "truncation": 4},
            "grid": {"eta_max": 0.8, "K": 10},
            "runs": 10000,
            "em": {"truncation": 8, "max_iterations": 100},
            "displacement": {"magnitude": 0.5, "n0": 4, "s_max": 1},
            "output_dir": str(tmp_path / "fr"),
        }
        cfg = _write_yaml(tmp_path / "fr.yaml", mapping)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["full-rho", "--config", str(cfg)]) in (0, 2)
        assert (tmp_path / "fr" / "density.json").is_file()
        assert (tmp_path / "fr" / "delta.csv").is_file()

        mapping["displacement"]["magnitude"] = 0.0
        mapping["output_dir"] = str(tmp_path / "zero")
        cfg = _write_yaml(tmp_path / "zero.yaml", mapping)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["full-rho", "--config", str(cfg)]) == 4

    def test_bad_config_exit_three(self, tmp_path):
        cfg = _write_yaml(tmp_path / "c.yaml", {"scenario": "single_mode", "bogus": 1})
        assert main(["simulate", "--config", str(cfg)]) == 3
