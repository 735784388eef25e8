"""Command-line workflows: ``onoff simulate | reconstruct | full-rho | report``.

Every parameter can come from ``--config`` (YAML or JSON); flags given on
the command line override the file.  Outputs go to ``--output-dir``, else
the config's ``output_dir``, else ``$ONOFF_OUTPUT_DIR``, else
``./onoff-output``.

Exit status: 0 success, 2 EM stopped without converging, 3 invalid input,
4 ill-conditioned least-squares inversion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .bipartite import em_reconstruct_joint
from .config import (
    ExperimentConfig,
    bipartite_source,
    build_state,
    default_output_dir,
    load_config,
    load_state,
    merge_overrides,
    save_state,
)
from .detection import (
    BipartiteClickData,
    OffFrequencyData,
    bipartite_off_probabilities,
    design_matrix,
    simulate_bipartite_data,
    simulate_off_data,
)
from .em import em_reconstruct
from .exceptions import IllConditionedError, OnOffError, ValidationError
from .full_rho import density_delta, reconstruct_density_matrix, simulate_phase_scan
from .states import JointPhotonDistribution

logger = logging.getLogger("onoff")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INVALID = 3
EXIT_ILL_CONDITIONED = 4

DATA_FILE = "clicks.csv"
STATE_FILE = "state.json"


def _common(parser):
    parser.add_argument("--config", type=Path, help="YAML or JSON configuration file")
    parser.add_argument("--output-dir", type=Path, help="directory for all outputs")
    parser.add_argument("-v", "--verbose", action="store_true")


def _em_flags(parser):
    g = parser.add_argument_group("EM")
    g.add_argument("--truncation", type=int, help="largest photon number N")
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--epsilon", type=float, help="error-parameter threshold")
    g.add_argument("--update", choices=("linpos", "binomial"))
    g.add_argument("--record-every", type=int)


def _displacement_flags(parser):
    g = parser.add_argument_group("displacement")
    g.add_argument("--magnitude", type=float, help="|alpha| of the local oscillator")
    g.add_argument("--phases", type=int, help="number of equally spaced phases")
    g.add_argument("--n0", type=int, help="truncation of the reconstructed density matrix")
    g.add_argument("--s-max", type=int, help="highest subdiagonal reconstructed")
    g.add_argument("--eta-max", type=float, help="detector efficiency behind the attenuator")


def build_parser():
    parser = argparse.ArgumentParser(prog="onoff", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic click data and a manifest")
    _common(p)
    p.add_argument("--scenario", choices=("single_mode", "bipartite", "full_rho"))
    p.add_argument("--runs", type=int, help="trials per setting")
    p.add_argument("--seed", type=int)
    p.add_argument("--eta-max-grid", type=float, dest="grid_eta_max", help="largest efficiency of a linear grid")
    p.add_argument("--settings", type=int, dest="grid_k", help="number K of efficiency settings")
    p.add_argument("--exact", action="store_true", default=None, help="exact probabilities instead of samples")
    _em_flags(p)
    _displacement_flags(p)

    p = sub.add_parser("reconstruct", help="EM reconstruction of (joint) photon distributions")
    _common(p)
    p.add_argument("--data", type=Path, help="click-data CSV (default: <output-dir>/clicks.csv)")
    p.add_argument("--reference", type=Path, help="state JSON used for fidelity traces")
    _em_flags(p)

    p = sub.add_parser("full-rho", help="density-matrix reconstruction from a phase scan")
    _common(p)
    p.add_argument("--data", type=Path, help="phase-scan CSV file or directory of CSV files")
    p.add_argument("--reference", type=Path, help="state JSON holding the true density matrix")
    _em_flags(p)
    _displacement_flags(p)

    p = sub.add_parser("report", help="plot-ready CSVs from a report or density JSON")
    _common(p)
    p.add_argument("input", type=Path, help="report.json or density.json")
    p.add_argument("--data", type=Path, help="click data for an off-frequency vs eta table")
    return parser


def _overrides(args):
    keys = {
        "scenario": "scenario",
        "runs": "runs",
        "seed": "seed",
        "exact": "exact",
        "output_dir": "output_dir",
        "grid_eta_max": "grid.eta_max",
        "grid_k": "grid.K",
        "truncation": "em.truncation",
        "max_iterations": "em.max_iterations",
        "epsilon": "em.epsilon_threshold",
        "update": "em.update",
        "record_every": "em.record_every",
        "magnitude": "displacement.magnitude",
        "phases": "displacement.n_phases",
        "n0": "displacement.n0",
        "s_max": "displacement.s_max",
        "eta_max": "displacement.eta_max",
    }
    out = {}
    for attr, key in keys.items():
        value = getattr(args, attr, None)
        if isinstance(value, Path):
            value = str(value)
        out[key] = value
    return out


def resolve_config(args, scenario=None):
    """Config file merged with flags; None when neither names a scenario."""
    overrides = _overrides(args)
    if scenario is not None and overrides.get("scenario") is None:
        overrides["scenario"] = scenario
    if args.config is not None:
        return load_config(args.config, overrides)
    mapping = merge_overrides({}, overrides)
    if "scenario" not in mapping:
        return None
    if mapping["scenario"] != "full_rho":
        mapping.pop("displacement", None)
    return ExperimentConfig.from_mapping(mapping)


def _output_dir(args, config):
    if args.output_dir is not None:
        out = args.output_dir
    elif config is not None:
        out = Path(config.output_dir)
    else:
        out = default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, config, files, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": None if config is None else config.to_dict(),
        "files": sorted(str(f.name) for f in files),
    }
    if extra:
        manifest.update(extra)
    return fio.write_json(out / f"manifest-{command}.json", manifest)


# ------------------------------------------------------------------ commands


def cmd_simulate(args):
    config = resolve_config(args)
    if config is None:
        raise ValidationError("simulate needs --config or --scenario")
    out = _output_dir(args, config)
    grid = config.efficiency_grid()
    em_n = config.em.get("truncation")
    files = []

    if config.scenario == "single_mode":
        state = build_state(config.state, "single_mode", em_n)
        if config.exact:
            p_off = design_matrix(grid.etas, state.truncation) @ state.probs
            data = OffFrequencyData.from_probabilities(grid.etas, p_off, config.runs)
        else:
            data = simulate_off_data(state, grid, config.runs, config.seed)
    elif config.scenario == "bipartite":
        state = build_state(config.state, "bipartite", em_n)
        source = bipartite_source(config.state) or state
        if config.exact:
            if callable(source):
                p = np.array([source(eta) for eta in grid.etas])
            else:
                p = np.array([bipartite_off_probabilities(state, eta)[:3] for eta in grid.etas])
            data = BipartiteClickData.from_probabilities(grid.etas, *p.T, runs=config.runs)
        else:
            data = simulate_bipartite_data(source, grid, config.runs, config.seed)
    else:
        d = config.displacement
        state = build_state(config.state, "full_rho", d["n0"])
        data = simulate_phase_scan(
            state,
            d["magnitude"],
            d["n_phases"],
            grid.etas,
            config.runs,
            config.seed,
            exact=config.exact,
            eta_max=1.0 if d["eta_max"] is None else d["eta_max"],
        )
    files.append(fio.save_click_data(out / DATA_FILE, data))
    files.append(save_state(out / STATE_FILE, state))
    files.append(_write_manifest(out, "simulate", config, files))
    logger.info("wrote %s", ", ".join(str(f) for f in files))
    return EXIT_OK


def _reference(args, config, scenario, truncation):
    if args.reference is not None:
        return load_state(args.reference)
    if config is not None and config.state:
        return build_state(config.state, scenario, truncation)
    return None


def cmd_reconstruct(args):
    config = resolve_config(args)
    out = _output_dir(args, config)
    data_path = args.data or out / DATA_FILE
    data = fio.load_click_data(data_path)
    if isinstance(data, OffFrequencyData):
        scenario = "single_mode"
    elif isinstance(data, BipartiteClickData):
        scenario = "bipartite"
    else:
        raise ValidationError("phase-scan data: use the full-rho command")
    if config is None:
        config = ExperimentConfig(scenario=scenario, output_dir=str(out))
    elif config.scenario != scenario:
        raise ValidationError(f"data holds {scenario} records but the config says {config.scenario}")
    default_n = 20 if scenario == "single_mode" else 2
    em_config = config.em_config(truncation=default_n)
    reference = _reference(args, config, scenario, em_config.truncation)
    if reference is not None and reference.truncation > em_config.truncation:
        raise ValidationError("reference truncation exceeds the reconstruction truncation")

    if scenario == "single_mode":
        report = em_reconstruct(data, em_config, reference)
    else:
        report = em_reconstruct_joint(data, em_config, reference)
    files = _write_report_files(out, report, reference, data)
    files.append(_write_manifest(out, "reconstruct", config, files, {"data": str(data_path)}))
    print(
        f"{scenario}: {report.stop_reason} after {report.iterations_used} iterations, "
        f"epsilon={report.epsilon:.3g}"
        + ("" if report.fidelity_trace is None else f", fidelity={report.fidelity_trace[-1]:.6f}")
    )
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _write_report_files(out, report, reference, data=None):
    files = [
        fio.save_report(out / "report.json", report, reference),
        fio.save_traces(out / "traces.csv", report),
        fio.save_distribution(out / "distribution.csv", report.distribution, report.fisher_variances),
    ]
    if isinstance(report.distribution, JointPhotonDistribution):
        files.append(fio.save_joint_matrix(out / "joint_matrix.csv", report.distribution))
    if data is not None:
        files.append(save_off_frequencies(out / "off_frequencies.csv", report.distribution, data))
    return files


def save_off_frequencies(path, dist, data):
    """Measured and modelled off frequencies per efficiency."""
    if isinstance(data, OffFrequencyData):
        model = design_matrix(data.eta, dist.truncation) @ dist.probs
        rows = zip(data.eta, data.frequencies, model)
        return fio.atomic_write(path, fio._csv_text(("eta", "measured", "model"), rows))
    runs = data.runs
    rows = []
    for j, eta in enumerate(data.eta):
        m00, m01, m10, _ = bipartite_off_probabilities(dist, eta)
        rows.append(
            (eta, data.n00[j] / runs[j], m00, data.n01[j] / runs[j], m01, data.n10[j] / runs[j], m10)
        )
    header = ("eta", "f00", "p00", "f01", "p01", "f10", "p10")
    return fio.atomic_write(path, fio._csv_text(header, rows))


def cmd_full_rho(args):
    config = resolve_config(args, scenario="full_rho" if args.config is None else None)
    if config.scenario != "full_rho":
        raise ValidationError(f"config scenario is {config.scenario}, expected full_rho")
    out = _output_dir(args, config)
    data_path = args.data or out / DATA_FILE
    scan = fio.load_click_data(data_path, scenario="full_rho")
    d = config.displacement
    if not np.isclose(scan.magnitude, d["magnitude"]) and args.magnitude is not None:
        raise ValidationError(f"data magnitude {scan.magnitude} differs from --magnitude {d['magnitude']}")
    settings = {"truncation": 2 * d["n0"] + 4, "record_every": 100, **config.em}
    em_config = ExperimentConfig(scenario="full_rho", em=settings).em_config()
    reference = _reference(args, config, "full_rho", d["n0"])
    density, report = reconstruct_density_matrix(
        scan, d["n0"], d["s_max"], em_config, d["eta_max"], reference
    )
    files = [
        fio.save_density(out / "density.json", density, report, reference),
        fio.save_density_elements(out / "density_elements.csv", density),
    ]
    if reference is not None:
        files.append(fio.save_delta(out / "delta.csv", density_delta(density, reference)))
    files.append(_write_manifest(out, "full-rho", config, files, {"data": str(data_path)}))
    conds = ", ".join(f"s={s}: {c:.3g}" for s, c in report.condition_numbers.items())
    print(f"density matrix n0={d['n0']}, trace deviation {report.trace_deviation:.3g}, cond {conds}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_report(args):
    with open(args.input) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.input}: {exc}") from None
    out = _output_dir(args, None) if args.output_dir is not None else args.input.parent
    out.mkdir(parents=True, exist_ok=True)
    if "elements" in obj:
        density, reference = fio.density_from_dict(obj)
        files = [fio.save_density_elements(out / "density_elements.csv", density)]
        if reference is not None:
            files.append(fio.save_delta(out / "delta.csv", density_delta(density, reference)))
    else:
        report, reference = fio.report_from_dict(obj)
        data = fio.load_click_data(args.data) if args.data is not None else None
        files = _write_report_files(out, report, reference, data)[1:]
    for f in files:
        print(f)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "full-rho": cmd_full_rho,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except IllConditionedError as exc:
        print(f"error: {exc} (condition number {exc.condition_number:.3g})", file=sys.stderr)
        return EXIT_ILL_CONDITIONED
    except (OnOffError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
