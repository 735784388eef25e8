"""File formats: CSV click data, JSON reports and plot-ready CSV exports.

Click data
    single mode   ``eta,runs,off_counts``
    bipartite     ``eta,runs,n00,n01,n10``
    phase scan    ``phase,magnitude,eta,runs,off_counts`` (phase in radians)

Reports and density matrices are JSON.  Complex numbers are written as
``[re, im]`` pairs and floats with 17 significant digits so that every
value survives a save/load round trip.  All writes go to a temporary file
in the target directory and are moved into place with ``os.replace``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .detection import BipartiteClickData, OffFrequencyData
from .em import ReconstructionReport
from .exceptions import ParseError, ValidationError
from .full_rho import PhaseScanData
from .states import DensityMatrix, JointPhotonDistribution, PhotonDistribution

SINGLE_COLUMNS = ("eta", "runs", "off_counts")
BIPARTITE_COLUMNS = ("eta", "runs", "n00", "n01", "n10")
PHASE_COLUMNS = ("phase", "magnitude", "eta", "runs", "off_counts")
SCHEMAS = {"single_mode": SINGLE_COLUMNS, "bipartite": BIPARTITE_COLUMNS, "full_rho": PHASE_COLUMNS}


def fmt(x):
    """17 significant digits; integral values without a decimal point."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return f"{x:.17g}"


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def write_json(path, obj):
    return atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _float(x):
    return float(f"{float(x):.17g}")


# ---------------------------------------------------------------- click data


def save_click_data(path, data):
    if isinstance(data, OffFrequencyData):
        rows = zip(data.eta, data.runs, data.off_counts)
        return atomic_write(path, _csv_text(SINGLE_COLUMNS, rows))
    if isinstance(data, BipartiteClickData):
        rows = zip(data.eta, data.runs, data.n00, data.n01, data.n10)
        return atomic_write(path, _csv_text(BIPARTITE_COLUMNS, rows))
    if isinstance(data, PhaseScanData):
        rows = []
        for phase, block in zip(data.phases, data.blocks):
            for eta, runs, off in zip(block.eta, block.runs, block.off_counts):
                rows.append((phase, data.magnitude, eta, runs, off))
        return atomic_write(path, _csv_text(PHASE_COLUMNS, rows))
    raise ValidationError(f"cannot save {type(data).__name__}")


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line_no)
            try:
                rows.append((line_no, [float(c) for c in row]))
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", line=line_no) from None
    return tuple(header), rows


def detect_scenario(header):
    for name, cols in SCHEMAS.items():
        if tuple(header) == cols:
            return name
    raise ParseError(f"unrecognized header {','.join(header)}", line=1)


def _validated(rows, build):
    """Build the data object; a violation is reported with its file line."""
    try:
        return build([v for _, v in rows])
    except ValidationError as exc:
        if exc.record is None:
            raise
        line = rows[exc.record][0]
        raise ValidationError(f"line {line}: {exc}", record=exc.record) from None


def _single(values):
    arr = np.array(values, dtype=float)
    return OffFrequencyData(arr[:, 0], arr[:, 1], arr[:, 2])


def _bipartite(values):
    arr = np.array(values, dtype=float)
    return BipartiteClickData(*arr.T)


def _phase_scan(rows):
    _validated([(line, v[2:]) for line, v in rows], _single)
    arr = np.array([v for _, v in rows], dtype=float)
    magnitudes = np.unique(arr[:, 1])
    if magnitudes.size != 1:
        raise ValidationError("a phase scan must use a single displacement magnitude")
    keys = np.round(np.mod(arr[:, 0], 2 * np.pi), 12)
    groups, first = np.unique(keys, return_index=True)
    # keep the phase as written rather than its rounded grouping key
    phases = arr[first, 0]
    blocks = tuple(
        OffFrequencyData(arr[keys == k, 2], arr[keys == k, 3], arr[keys == k, 4]) for k in groups
    )
    return PhaseScanData(float(magnitudes[0]), phases, blocks)


def load_click_data(path, scenario=None):
    """Read click data, validating every record.

    ``path`` may be a directory, in which case all ``*.csv`` files in it
    (sorted by name) are concatenated; they must share one header.
    """
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise ParseError(f"no CSV files in {path}")
    header, rows = None, []
    for f in files:
        h, r = _read_rows(f)
        if header is not None and h != header:
            raise ParseError(f"{f.name}: header differs from {files[0].name}", line=1)
        header = h
        rows.extend(r)
    found = detect_scenario(header)
    if scenario is not None and scenario != found:
        raise ParseError(f"file holds {found} data, expected {scenario}", line=1)
    if not rows:
        raise ValidationError("file has no records")
    if found == "single_mode":
        return _validated(rows, _single)
    if found == "bipartite":
        return _validated(rows, _bipartite)
    return _phase_scan(rows)


# ------------------------------------------------------------------- reports


def _variances(values):
    return [None if not np.isfinite(v) else _float(v) for v in values]


def _joint_matrix(dist):
    return [[_float(v) for v in row] for row in dist.probs]


def report_to_dict(report, reference=None):
    dist = report.distribution
    out = {
        "kind": "joint" if isinstance(dist, JointPhotonDistribution) else "single_mode",
        "truncation": dist.truncation,
        "tail_mass": _float(dist.tail_mass),
        "iterations_used": int(report.iterations_used),
        "converged": bool(report.converged),
        "stop_reason": report.stop_reason,
        "likelihood": report.likelihood,
        "underdetermined": bool(report.underdetermined),
        "log_likelihood": None if not np.isfinite(report.log_likelihood) else _float(report.log_likelihood),
        "diagnostics": list(report.diagnostics),
        "traces": {
            "iteration": [int(i) for i in report.iteration_trace],
            "epsilon": [_float(v) for v in report.epsilon_trace],
            "loglik": [_float(v) if np.isfinite(v) else None for v in report.loglik_trace],
            "fidelity": None
            if report.fidelity_trace is None
            else [_float(v) for v in report.fidelity_trace],
        },
        "fisher_variances": _variances(report.fisher_variances),
        "fisher_unbounded": report.unbounded,
    }
    if isinstance(dist, JointPhotonDistribution):
        out["distribution"] = _joint_matrix(dist)
        out["flat_index"] = "p = 1 + k + n*(N+1), one-based"
        out["fisher_unbounded"] = [p + 1 for p in report.unbounded]
    else:
        out["distribution"] = [_float(v) for v in dist.probs]
    if reference is not None:
        out["reference"] = (
            _joint_matrix(reference) if isinstance(reference, JointPhotonDistribution)
            else [_float(v) for v in reference.probs]
        )
        out["reference_tail_mass"] = _float(reference.tail_mass)
    return out


def report_from_dict(obj):
    """Rebuild a ReconstructionReport (and reference, if stored) from JSON."""
    kind = obj["kind"]
    tail = obj.get("tail_mass", 0.0)
    if kind == "joint":
        dist = JointPhotonDistribution(np.array(obj["distribution"]), tail)
        unbounded = [p - 1 for p in obj["fisher_unbounded"]]
    else:
        dist = PhotonDistribution(np.array(obj["distribution"]), tail)
        unbounded = obj["fisher_unbounded"]
    var = np.array([np.inf if v is None else v for v in obj["fisher_variances"]], dtype=float)
    var[unbounded] = np.inf
    tr = obj["traces"]
    report = ReconstructionReport(
        distribution=dist,
        iterations_used=obj["iterations_used"],
        converged=obj["converged"],
        stop_reason=obj["stop_reason"],
        likelihood=obj["likelihood"],
        iteration_trace=np.array(tr["iteration"], dtype=int),
        epsilon_trace=np.array(tr["epsilon"], dtype=float),
        loglik_trace=np.array([-np.inf if v is None else v for v in tr["loglik"]], dtype=float),
        fidelity_trace=None if tr["fidelity"] is None else np.array(tr["fidelity"], dtype=float),
        fisher_variances=var,
        log_likelihood=-np.inf if obj["log_likelihood"] is None else obj["log_likelihood"],
        underdetermined=obj["underdetermined"],
        diagnostics=list(obj["diagnostics"]),
    )
    reference = None
    if "reference" in obj:
        cls = JointPhotonDistribution if kind == "joint" else PhotonDistribution
        reference = cls(np.array(obj["reference"]), obj.get("reference_tail_mass", 0.0))
    return report, reference


def save_report(path, report, reference=None):
    return write_json(path, report_to_dict(report, reference))


def load_report(path):
    with open(path) as fh:
        return report_from_dict(json.load(fh))


def trace_rows(report):
    fid = report.fidelity_trace
    for j, it in enumerate(report.iteration_trace):
        yield (
            int(it),
            report.epsilon_trace[j],
            report.loglik_trace[j],
            "" if fid is None else fid[j],
        )


def save_traces(path, report):
    """CSV ``iteration,epsilon,loglik,fidelity`` (fidelity blank without a reference)."""
    return atomic_write(path, _csv_text(("iteration", "epsilon", "loglik", "fidelity"), trace_rows(report)))


def save_distribution(path, dist, fisher_variances=None):
    if isinstance(dist, JointPhotonDistribution):
        n = dist.truncation
        rows = []
        for i in range(n + 1):
            for k in range(n + 1):
                p = 1 + k + i * (n + 1)
                var = "" if fisher_variances is None else _var_cell(fisher_variances[p - 1])
                rows.append((p, i, k, dist.probs[i, k], var))
        return atomic_write(path, _csv_text(("p", "n", "k", "probability", "variance"), rows))
    rows = [
        (n, v, "" if fisher_variances is None else _var_cell(fisher_variances[n]))
        for n, v in enumerate(dist.probs)
    ]
    return atomic_write(path, _csv_text(("n", "probability", "variance"), rows))


def _var_cell(v):
    return fmt(v) if np.isfinite(v) else "unbounded"


def save_joint_matrix(path, dist):
    """Joint distribution as an (N+1)x(N+1) grid, row n, column k."""
    n = dist.truncation
    header = ["n\\k"] + [str(k) for k in range(n + 1)]
    rows = [[str(i)] + [fmt(v) for v in dist.probs[i]] for i in range(n + 1)]
    return atomic_write(path, _csv_text(header, rows))


# ----------------------------------------------------------- density matrices


def density_to_dict(rho, report=None, reference=None):
    out = {
        "truncation": rho.truncation,
        "tail_mass": _float(rho.tail_mass),
        "elements": [[[_float(z.real), _float(z.imag)] for z in row] for row in rho.elements],
    }
    if report is not None:
        out.update(
            n0=report.n0,
            s_max=report.s_max,
            condition_numbers={str(s): _float(c) for s, c in report.condition_numbers.items()},
            trace_deviation=_float(report.trace_deviation),
            diagonal_imaginary=_float(report.diagonal_imaginary),
            clipped_diagonal=_float(report.clipped_diagonal),
            converged=bool(report.converged),
            phase_iterations=[int(r.iterations_used) for r in report.phase_reports],
        )
    if reference is not None:
        out["reference"] = density_to_dict(reference)["elements"]
    return out


def density_from_dict(obj):
    arr = np.array(obj["elements"], dtype=float)
    rho = DensityMatrix(arr[..., 0] + 1j * arr[..., 1], obj.get("tail_mass", 0.0))
    reference = None
    if "reference" in obj:
        ref = np.array(obj["reference"], dtype=float)
        reference = DensityMatrix(ref[..., 0] + 1j * ref[..., 1])
    return rho, reference


def save_density(path, rho, report=None, reference=None):
    return write_json(path, density_to_dict(rho, report, reference))


def load_density(path):
    with open(path) as fh:
        return density_from_dict(json.load(fh))


def save_delta(path, delta):
    """Grid of |rho_rec - rho_ref|, row n, column m."""
    n = delta.shape[0]
    header = ["n\\m"] + [str(m) for m in range(n)]
    rows = [[str(i)] + [fmt(v) for v in delta[i]] for i in range(n)]
    return atomic_write(path, _csv_text(header, rows))


def save_density_elements(path, rho):
    """Long-form CSV ``n,m,re,im,abs`` of the lower triangle incl. diagonal."""
    rows = []
    for n in range(rho.truncation + 1):
        for m in range(n + 1):
            z = rho.elements[n, m]
            rows.append((n, m, z.real, z.imag, abs(z)))
    return atomic_write(path, _csv_text(("n", "m", "re", "im", "abs"), rows))
