"""Experiment configuration and the JSON state-file format.

A configuration is a mapping (YAML or JSON file) such as::

    scenario: single_mode
    state: {kind: coherent, mean_photons: 5.39, truncation: 20}
    grid: {eta_max: 0.66, K: 30, spacing: linear}
    runs: 100000
    seed: 1
    em: {truncation: 20, max_iterations: 100000, epsilon_threshold: 1.0e-7}
    output_dir: results

State kinds
    single_mode   coherent (mean_photons), thermal (mean_photons), fock (n),
                  distribution (probs)
    bipartite     bs (transmittance), multithermal (n_ave, modes,
                  transmittance), joint (probs)
    full_rho      coherent (amplitude: [re, im]), thermal (mean_photons),
                  fock (n), density (elements: nested [re, im])
Any scenario also accepts ``{file: path}`` pointing to a state JSON file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .detection import EfficiencyGrid, multithermal_onoff_stats
from .em import EmConfig
from .exceptions import ValidationError
from .states import (
    DensityMatrix,
    JointPhotonDistribution,
    PhotonDistribution,
    bs_superposition_joint,
    coherent_density_matrix,
    coherent_distribution,
    fock_density_matrix,
    multithermal_joint,
    thermal_density_matrix,
    thermal_distribution,
)

SCENARIOS = ("single_mode", "bipartite", "full_rho")
OUTPUT_ENV = "ONOFF_OUTPUT_DIR"
_EM_KEYS = {f.name for f in dataclasses.fields(EmConfig)}
_DISPLACEMENT_DEFAULTS = {"magnitude": 0.1, "n_phases": 12, "n0": 8, "s_max": 2, "eta_max": None}


def default_output_dir():
    return Path(os.environ.get(OUTPUT_ENV, "onoff-output"))


@dataclass
class ExperimentConfig:
    """Everything needed to regenerate a simulated data set and its reconstruction.

    Attributes
    ----------
    scenario : {"single_mode", "bipartite", "full_rho"}
    state : dict
        State specification (see module docstring).
    grid : list or dict
        Explicit efficiencies, or ``{eta_max, K, spacing}``.
    runs : int
        Trials per efficiency setting (per phase for ``full_rho``).
    seed : int
    em : dict
        Keyword arguments of ``EmConfig``; ``truncation`` may be omitted.
    displacement : dict
        ``full_rho`` only: magnitude, n_phases, n0, s_max, eta_max.
    exact : bool
        Write exact probabilities (runs scaled) instead of sampled counts.
    output_dir : str
    """

    scenario: str
    state: dict = field(default_factory=dict)
    grid: object = None
    runs: int = 100_000
    seed: int = 0
    em: dict = field(default_factory=dict)
    displacement: dict = field(default_factory=dict)
    exact: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if int(self.runs) != self.runs or self.runs < 1:
            raise ValidationError("runs must be a positive integer")
        self.runs = int(self.runs)
        self.seed = int(self.seed)
        unknown = set(self.em) - _EM_KEYS
        if unknown:
            raise ValidationError(f"unknown em settings: {sorted(unknown)}")
        if self.scenario == "full_rho":
            unknown = set(self.displacement) - set(_DISPLACEMENT_DEFAULTS)
            if unknown:
                raise ValidationError(f"unknown displacement settings: {sorted(unknown)}")
            self.displacement = {**_DISPLACEMENT_DEFAULTS, **self.displacement}
        if self.output_dir is None:
            self.output_dir = str(default_output_dir())
        file = self.state.get("file") if isinstance(self.state, dict) else None
        if file is not None and not Path(file).is_file():
            raise ValidationError(f"state file {file} does not exist")

    @classmethod
    def from_mapping(cls, mapping):
        if not isinstance(mapping, dict):
            raise ValidationError("configuration must be a mapping")
        if "scenario" not in mapping:
            raise ValidationError("configuration lacks 'scenario'")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**mapping)

    def to_dict(self):
        return dataclasses.asdict(self)

    def efficiency_grid(self):
        return build_grid(self.grid)

    def em_config(self, truncation=None):
        settings = dict(self.em)
        if "truncation" not in settings:
            if truncation is None:
                raise ValidationError("em.truncation is required")
            settings["truncation"] = truncation
        return EmConfig(**settings)


def load_config(path, overrides=None):
    """Read YAML or JSON (JSON is valid YAML) and apply non-None ``overrides``."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {path} does not exist")
    with open(path) as fh:
        try:
            mapping = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_mapping(merge_overrides(mapping, overrides or {}))


def merge_overrides(mapping, overrides):
    """Dotted keys (``em.max_iterations``) reach into nested sections."""
    out = json.loads(json.dumps(mapping))
    for key, value in overrides.items():
        if value is None:
            continue
        target = out
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    return out


def build_grid(spec):
    if spec is None:
        raise ValidationError("an efficiency grid is required")
    if isinstance(spec, dict):
        spacing = spec.get("spacing", "linear")
        if spacing != "linear":
            raise ValidationError(f"unsupported grid spacing {spacing!r}")
        try:
            grid = EfficiencyGrid.linear(float(spec["eta_max"]), int(spec["K"]))
        except KeyError as exc:
            raise ValidationError(f"grid lacks {exc.args[0]!r}") from None
        if spec.get("jitter"):
            grid = grid.jittered(float(spec["jitter"]), int(spec.get("jitter_seed", 0)))
        return grid
    return EfficiencyGrid(np.asarray(spec, dtype=float))


# ---------------------------------------------------------------- state files


def state_to_dict(state):
    if isinstance(state, PhotonDistribution):
        return {"kind": "distribution", "probs": state.probs.tolist(), "tail_mass": state.tail_mass}
    if isinstance(state, JointPhotonDistribution):
        return {"kind": "joint", "probs": state.probs.tolist(), "tail_mass": state.tail_mass}
    if isinstance(state, DensityMatrix):
        elements = [[[z.real, z.imag] for z in row] for row in state.elements]
        return {"kind": "density", "elements": elements, "tail_mass": state.tail_mass}
    raise ValidationError(f"cannot serialize {type(state).__name__}")


def save_state(path, state):
    from .io import write_json

    return write_json(path, state_to_dict(state))


def load_state(path):
    with open(path) as fh:
        return build_state(json.load(fh))


def _need(spec, key):
    if key not in spec:
        raise ValidationError(f"state kind {spec.get('kind')!r} requires {key!r}")
    return spec[key]


def build_state(spec, scenario=None, truncation=None):
    """Instantiate a state from its specification.

    ``truncation`` is the fallback when ``spec`` does not carry one.
    For ``scenario="full_rho"`` coherent and thermal specs give density
    matrices rather than photon distributions.
    """
    if not isinstance(spec, dict):
        raise ValidationError("state specification must be a mapping")
    if "file" in spec:
        return load_state(spec["file"])
    kind = _need(spec, "kind")
    n = int(spec.get("truncation", truncation if truncation is not None else 20))
    tail = float(spec.get("tail_mass", 0.0))
    if kind == "distribution":
        return PhotonDistribution(np.asarray(_need(spec, "probs"), dtype=float), tail)
    if kind == "joint":
        return JointPhotonDistribution(np.asarray(_need(spec, "probs"), dtype=float), tail)
    if kind == "density":
        arr = np.asarray(_need(spec, "elements"), dtype=float)
        return DensityMatrix(arr[..., 0] + 1j * arr[..., 1], tail)
    if kind == "bs":
        return bs_superposition_joint(float(_need(spec, "transmittance")))
    if kind == "multithermal":
        return multithermal_joint(
            float(_need(spec, "n_ave")),
            int(_need(spec, "modes")),
            n,
            float(spec.get("transmittance", 0.5)),
        )
    if scenario == "full_rho":
        if kind == "coherent":
            amp = _need(spec, "amplitude")
            z = complex(*amp) if isinstance(amp, (list, tuple)) else complex(amp)
            return coherent_density_matrix(z, n)
        if kind == "thermal":
            return thermal_density_matrix(float(_need(spec, "mean_photons")), n)
        if kind == "fock":
            return fock_density_matrix(int(_need(spec, "n")), n)
    else:
        if kind == "coherent":
            if "mean_photons" in spec:
                return coherent_distribution(float(spec["mean_photons"]), n)
            amp = _need(spec, "amplitude")
            z = complex(*amp) if isinstance(amp, (list, tuple)) else complex(amp)
            return coherent_distribution(abs(z) ** 2, n)
        if kind == "thermal":
            return thermal_distribution(float(_need(spec, "mean_photons")), n)
        if kind == "fock":
            return PhotonDistribution.fock(int(_need(spec, "n")), n)
    raise ValidationError(f"unknown state kind {kind!r} for scenario {scenario!r}")


def bipartite_source(spec):
    """Closed-form click probabilities for multithermal specs, else None."""
    if isinstance(spec, dict) and spec.get("kind") == "multithermal":
        n_ave = float(spec["n_ave"])
        modes = int(spec["modes"])
        tau = float(spec.get("transmittance", 0.5))
        return lambda eta: multithermal_onoff_stats(n_ave, modes, tau, eta)
    return None
