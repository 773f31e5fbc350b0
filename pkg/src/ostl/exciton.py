"""Excitonic system definition, physical units and the simulation-parameter grid."""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

# CODATA 2018
SPEED_OF_LIGHT_CM_PER_PS = 2.99792458e-2
BOLTZMANN_CM_PER_K = 0.695034800
CM1_TO_RAD_PER_PS = 2.0 * math.pi * SPEED_OF_LIGHT_CM_PER_PS

SYMMETRY_WARN_TOL = 1e-9
SYMMETRY_ERROR_TOL = 1e-6

FMO_FILE = "fmo_7site.txt"
FMO_SHA256 = "cd2cb2c79da57c11665a3ca95577c824318c5986c830b00e5fd237838faec66d"

# j label -> 1-based site number
PAPER_EXCITATION_SITES = (1, 6)


def cm1_to_angular_frequency(x):
    """Convert wavenumbers (cm^-1) to angular frequency in rad/ps."""
    return CM1_TO_RAD_PER_PS * x


def thermal_energy(temperature: float) -> float:
    """k_B T in cm^-1."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return BOLTZMANN_CM_PER_K * temperature


@dataclass(frozen=True)
class SystemSpec:
    """Site-basis Hamiltonian (cm^-1) of an excitonic complex.

    ``excitation_sites`` holds the 1-based site numbers selected by the
    labels j = 0 and j = 1.
    """

    hamiltonian: np.ndarray
    name: str = "system"
    excitation_sites: tuple[int, ...] = ()

    def __post_init__(self):
        h = np.array(self.hamiltonian, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise DataError(f"Hamiltonian must be square, got shape {h.shape}")
        if h.shape[0] < 2:
            raise DataError("need at least 2 sites")
        if not np.array_equal(h, h.T):
            raise DataError("Hamiltonian is not exactly symmetric")
        h.setflags(write=False)
        object.__setattr__(self, "hamiltonian", h)
        sites = tuple(self.excitation_sites) or default_excitation_sites(h.shape[0])
        if any(not 1 <= s <= h.shape[0] for s in sites):
            raise DataError(f"excitation sites {sites} outside 1..{h.shape[0]}")
        object.__setattr__(self, "excitation_sites", sites)

    @property
    def n_sites(self) -> int:
        return self.hamiltonian.shape[0]

    def initial_site(self, j: int) -> int:
        """0-based index of the initially excited site for label j."""
        return self.excitation_sites[j] - 1


def default_excitation_sites(n_sites: int) -> tuple[int, int]:
    if n_sites >= PAPER_EXCITATION_SITES[1]:
        return PAPER_EXCITATION_SITES
    return (1, n_sites)


def _parse_hamiltonian(text: str, source: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{source}: empty Hamiltonian file")
    try:
        n = int(lines[0])
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from None
    if n < 2:
        raise DataError(f"{source}: n_sites must be >= 2, got {n}")
    if len(rows) != n or any(len(r) != n for r in rows):
        raise DataError(f"{source}: expected a {n}x{n} matrix")
    return np.array(rows, dtype=float)


def load_system(path, name: str | None = None, excitation_sites: Sequence[int] = ()) -> SystemSpec:
    """Read a Hamiltonian text file.

    Small asymmetries (above 1e-9 cm^-1) are averaged away with a warning;
    anything above 1e-6 cm^-1 is rejected.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    h = _parse_hamiltonian(text, str(path))
    asym = float(np.max(np.abs(h - h.T)))
    if asym > SYMMETRY_ERROR_TOL:
        raise DataError(f"{path}: Hamiltonian asymmetric by {asym:.3g} cm^-1")
    if asym > 0:
        if asym > SYMMETRY_WARN_TOL:
            log.warning("%s: symmetrising Hamiltonian (max asymmetry %.3g cm^-1)", path, asym)
        h = 0.5 * (h + h.T)
    return SystemSpec(h, name=name or path.stem, excitation_sites=tuple(excitation_sites))


def save_system(system: SystemSpec, path) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in system.hamiltonian]
    Path(path).write_text(f"# {system.name}\n{system.n_sites}\n" + "\n".join(rows) + "\n")


def fmo_path() -> Path:
    return Path(str(resources.files("ostl") / "data" / FMO_FILE))


def fmo_system() -> SystemSpec:
    """The shipped 7-site FMO Hamiltonian, checked against its recorded digest."""
    path = fmo_path()
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    if digest != FMO_SHA256:
        raise DataError(f"{path}: checksum mismatch ({digest})")
    return load_system(path, name="fmo7")


@dataclass(frozen=True)
class SimulationPoint:
    j: int
    lam: float
    gamma: float
    temperature: float

    def __post_init__(self):
        if self.j not in (0, 1):
            raise ValueError(f"site label must be 0 or 1, got {self.j}")
        for label, v in (("lambda", self.lam), ("gamma", self.gamma), ("temperature", self.temperature)):
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{label} must be positive and finite, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.j, self.lam, self.gamma, self.temperature], dtype=float)

    @classmethod
    def from_array(cls, a) -> "SimulationPoint":
        j, lam, gamma, t = (float(v) for v in a)
        return cls(int(j), lam, gamma, t)

    def key(self) -> str:
        return f"j{self.j}_l{self.lam:g}_g{self.gamma:g}_T{self.temperature:g}"


def _check_axis(name: str, values) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise DataError(f"grid axis {name} is empty")
    if any(not v > 0 for v in vals):
        raise DataError(f"grid axis {name} must be positive")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise DataError(f"grid axis {name} must be strictly increasing")
    return vals


@dataclass(frozen=True)
class ParameterGrid:
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    temperatures: tuple[float, ...]
    sites: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", _check_axis("lambdas", self.lambdas))
        object.__setattr__(self, "gammas", _check_axis("gammas", self.gammas))
        object.__setattr__(self, "temperatures", _check_axis("temperatures", self.temperatures))
        sites = tuple(int(s) for s in self.sites)
        if not sites or any(s not in (0, 1) for s in sites) or list(sites) != sorted(set(sites)):
            raise DataError(f"site labels must be a strictly increasing subset of (0, 1), got {sites}")
        object.__setattr__(self, "sites", sites)

    def __len__(self) -> int:
        return len(self.lambdas) * len(self.gammas) * len(self.temperatures) * len(self.sites)

    def __iter__(self) -> Iterator[SimulationPoint]:
        for j, lam, g, t in itertools.product(self.sites, self.lambdas, self.gammas, self.temperatures):
            yield SimulationPoint(j, lam, g, t)

    def points(self) -> list[SimulationPoint]:
        return list(self)

    @property
    def maxima(self) -> tuple[float, float, float]:
        return (self.lambdas[-1], self.gammas[-1], self.temperatures[-1])

    def to_text(self) -> str:
        fmt = lambda vals: " ".join(f"{v:g}" for v in vals)  # noqa: E731
        return (f"lambdas = {fmt(self.lambdas)}\ngammas = {fmt(self.gammas)}\n"
                f"temperatures = {fmt(self.temperatures)}\nsites = {fmt(self.sites)}\n")


def paper_grid() -> ParameterGrid:
    """The 11 x 12 x 15 x 2 = 3960-point grid of the reference data set."""
    return ParameterGrid(
        lambdas=tuple(range(10, 311, 30)),
        gammas=tuple(range(25, 301, 25)),
        temperatures=tuple(range(30, 311, 20)),
        sites=(0, 1),
    )


def load_grid(path) -> ParameterGrid:
    """Parse a ``key = v1 v2 ...`` grid file (keys: lambdas, gammas, temperatures, sites)."""
    return parse_grid(Path(path).read_text(), str(path))


def parse_grid(text: str, path: str = "<grid>") -> ParameterGrid:
    fields: dict[str, list[float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition("=")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'key = values'")
        try:
            fields[key.strip()] = [float(v) for v in rest.replace(",", " ").split()]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    missing = {"lambdas", "gammas", "temperatures"} - fields.keys()
    if missing:
        raise DataError(f"{path}: missing {sorted(missing)}")
    return ParameterGrid(fields["lambdas"], fields["gammas"], fields["temperatures"],
                         tuple(int(s) for s in fields.get("sites", (0, 1))))
