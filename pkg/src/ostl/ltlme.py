"""Local thermalising Lindblad master equation for excitonic complexes.

The generator is built in the exciton (eigen)basis of the site Hamiltonian.
Each site couples to its own Drude-Lorentz bath through the projector
|m><m|.  In the secular limit this gives

* transfer jumps |a><b| between exciton states with rate
  ``w_ab * G(E_b - E_a)`` where ``w_ab = sum_m c_ma^2 c_mb^2`` and
  ``G(w) = RATE_PREFACTOR * J(w) * (1 + n(w))`` (uphill rates follow from
  the same expression at negative frequency, so detailed balance is exact);
* one pure-dephasing jump ``sum_a c_ma^2 |a><a|`` per site with the
  zero-frequency limit ``G(0) = RATE_PREFACTOR * 2 lambda k_B T / gamma``.

Rates are evaluated in cm^-1 and converted to rad/ps.  States are stored
in the site basis; superoperators act on column-stacked density matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import _binary
from .errors import DataError, NumericError
from .exciton import SimulationPoint, SystemSpec, cm1_to_angular_frequency, thermal_energy

RATE_PREFACTOR = 2.0
DEGENERACY_TOL = 1e-9  # cm^-1

FINE_STEP_FS = 5.0
COARSE_STEP_FS = 25.0
CROSSOVER_FS = 2500.0
T_MAX_FS = 10000.0


def spectral_density(omega, lam, gamma):
    """Drude-Lorentz spectral density 2 lam gamma w / (w^2 + gamma^2), cm^-1."""
    omega = np.asarray(omega, dtype=float)
    out = 2.0 * lam * gamma * omega / (omega ** 2 + gamma ** 2)
    return out if out.ndim else float(out)


def bose_occupation(omega, temperature):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0):
        raise ValueError("Bose occupation diverges at zero frequency; use the dephasing limit")
    out = 1.0 / np.expm1(omega / thermal_energy(temperature))
    return out if out.ndim else float(out)


def dephasing_limit(lam: float, gamma: float, temperature: float) -> float:
    """lim_{w -> 0} J(w) n(w) = 2 lam k_B T / gamma."""
    return 2.0 * lam * thermal_energy(temperature) / gamma


def transfer_rate(omega, point: SimulationPoint):
    """Relaxation rate (cm^-1) for a jump releasing energy ``omega`` (negative = uphill)."""
    omega = np.asarray(omega, dtype=float)
    a = np.abs(omega)
    j = spectral_density(a, point.lam, point.gamma)
    n = bose_occupation(a, point.temperature)
    return RATE_PREFACTOR * j * np.where(omega > 0, 1.0 + n, n)


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray  # fs

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("time grid must be a non-empty 1-D array")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    def truncate(self, t_max_fs: float) -> "TimeGrid":
        return TimeGrid(self.times[self.times <= t_max_fs + 1e-9])

    def steps(self) -> np.ndarray:
        return np.diff(self.times)


def paper_time_grid() -> TimeGrid:
    """0..2500 fs every 5 fs, then 2525..10000 fs every 25 fs: 801 samples."""
    fine = np.arange(0, 501) * FINE_STEP_FS
    coarse = CROSSOVER_FS + np.arange(1, 301) * COARSE_STEP_FS
    return TimeGrid(np.concatenate([fine, coarse]))


def _spre(a):
    return np.kron(np.eye(a.shape[0]), a)


def _spost(a):
    return np.kron(a.T, np.eye(a.shape[0]))


def dissipator(a: np.ndarray) -> np.ndarray:
    """Superoperator of D[a] rho = a rho a^+ - {a^+ a, rho} / 2."""
    ada = a.conj().T @ a
    return np.kron(a.conj(), a) - 0.5 * _spre(ada) - 0.5 * _spost(ada)


@dataclass(frozen=True)
class LindbladGenerator:
    matrix: np.ndarray  # site basis, rad/ps
    exciton_energies: np.ndarray  # cm^-1, ascending
    exciton_vectors: np.ndarray  # columns are eigenvectors
    rates: np.ndarray  # rates[a, b]: b -> a, rad/ps
    dephasing_rate: float  # rad/ps
    kT: float  # cm^-1
    point: SimulationPoint = field(repr=False, default=None)

    @property
    def n_sites(self) -> int:
        return self.exciton_energies.size

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        n = self.n_sites
        return (self.matrix @ rho.reshape(-1, order="F")).reshape(n, n, order="F")

    def gibbs_populations(self) -> np.ndarray:
        e = self.exciton_energies - self.exciton_energies.min()
        p = np.exp(-e / self.kT)
        return p / p.sum()

    def gibbs_state(self) -> np.ndarray:
        """Thermal state exp(-H/kT)/Z in the site basis."""
        u = self.exciton_vectors
        return ((u * self.gibbs_populations()) @ u.T).astype(complex)

    def propagator(self, dt_fs: float) -> np.ndarray:
        return scipy.linalg.expm(self.matrix * (dt_fs * 1e-3))


def build_generator(system: SystemSpec, point: SimulationPoint) -> LindbladGenerator:
    n = system.n_sites
    energies, vectors = np.linalg.eigh(system.hamiltonian)
    gaps = np.diff(energies)
    if np.any(gaps < DEGENERACY_TOL):
        raise NumericError(f"degenerate exciton energies (min gap {gaps.min():.3g} cm^-1)")

    weights = vectors ** 2  # weights[m, a] = c_ma^2
    overlap = weights.T @ weights
    omega = energies[None, :] - energies[:, None]  # omega[a, b] = E_b - E_a
    off = ~np.eye(n, dtype=bool)
    rates_cm = np.zeros((n, n))
    rates_cm[off] = overlap[off] * transfer_rate(omega[off], point)
    rates = cm1_to_angular_frequency(rates_cm)
    deph = cm1_to_angular_frequency(RATE_PREFACTOR * dephasing_limit(point.lam, point.gamma, point.temperature))

    e_rel = cm1_to_angular_frequency(energies - energies.mean())
    h_exc = np.diag(e_rel).astype(complex)
    lex = -1j * (_spre(h_exc) - _spost(h_exc))
    for a in range(n):
        for b in range(n):
            if a != b:
                jump = np.zeros((n, n), dtype=complex)
                jump[a, b] = 1.0
                lex += rates[a, b] * dissipator(jump)
    for m in range(n):
        lex += deph * dissipator(np.diag(weights[m]).astype(complex))

    # rho_site = U rho_exc U^T  ->  vec(rho_site) = (U kron U) vec(rho_exc)
    s = np.kron(vectors, vectors)
    lsite = s @ lex @ s.T
    return LindbladGenerator(
        matrix=lsite,
        exciton_energies=energies,
        exciton_vectors=vectors,
        rates=rates,
        dephasing_rate=deph,
        kT=thermal_energy(point.temperature),
        point=point,
    )


@dataclass(frozen=True)
class Trajectory:
    point: SimulationPoint
    grid: TimeGrid
    states: np.ndarray  # (len(grid), n, n) complex, site basis

    def __post_init__(self):
        if self.states.shape[0] != len(self.grid):
            raise ValueError("one state per grid time required")

    @property
    def n_sites(self) -> int:
        return self.states.shape[1]

    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tii->ti", self.states))


def initial_state(system: SystemSpec, j: int) -> np.ndarray:
    rho = np.zeros((system.n_sites, system.n_sites), dtype=complex)
    s = system.initial_site(j)
    rho[s, s] = 1.0
    return rho


def propagate(system: SystemSpec, point: SimulationPoint, grid: TimeGrid | None = None,
              generator: LindbladGenerator | None = None) -> Trajectory:
    """Sample exp(L t) rho0 on ``grid`` by repeated application of step propagators."""
    grid = paper_time_grid() if grid is None else grid
    gen = build_generator(system, point) if generator is None else generator
    n = system.n_sites
    steps = np.round(grid.steps(), 9)
    props = {dt: gen.propagator(dt) for dt in np.unique(steps)}

    states = np.empty((len(grid), n, n), dtype=complex)
    states[0] = initial_state(system, point.j)
    vec = states[0].reshape(-1, order="F")
    for i, dt in enumerate(steps, start=1):
        vec = props[dt] @ vec
        rho = vec.reshape(n, n, order="F")
        if not np.all(np.isfinite(rho)):
            raise NumericError(f"non-finite density matrix at step {i} ({point.key()})")
        rho = 0.5 * (rho + rho.conj().T)
        states[i] = rho
        vec = rho.reshape(-1, order="F")
    return Trajectory(point, grid, states)


def hermiticity_residual(states: np.ndarray) -> np.ndarray:
    return np.max(np.abs(states - np.conj(np.swapaxes(states, -1, -2))), axis=(-2, -1))


def trace_deviation(states: np.ndarray) -> np.ndarray:
    return np.abs(np.einsum("...ii->...", states) - 1.0)


def min_eigenvalues(states: np.ndarray) -> np.ndarray:
    herm = 0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))
    return np.linalg.eigvalsh(herm)[..., 0]


TRAJECTORY_MAGIC = b"OSTLTRJ\x00"
TRAJECTORY_VERSION = 1


def trajectory_to_bytes(traj: Trajectory, digest: bytes = _binary.NO_DIGEST) -> bytes:
    n, m = traj.n_sites, len(traj.grid)
    body = b"".join([
        struct.pack("<II32s", n, m, digest),
        traj.point.as_array().astype("<f8").tobytes(),
        traj.grid.times.astype("<f8").tobytes(),
        np.ascontiguousarray(traj.states, dtype="<c16").tobytes(),
    ])
    return _binary.seal(TRAJECTORY_MAGIC, TRAJECTORY_VERSION, body)


def trajectory_from_bytes(blob: bytes, what: str = "trajectory") -> tuple[Trajectory, bytes]:
    """Decode a trajectory file; returns the trajectory and its manifest digest."""
    r = _binary.Reader(_binary.unseal(blob, TRAJECTORY_MAGIC, TRAJECTORY_VERSION, what), what)
    n, m, digest = r.unpack("<II32s")
    point = SimulationPoint.from_array(r.array("<f8", 4))
    times = r.array("<f8", m)
    states = r.array("<c16", m * n * n).reshape(m, n, n)
    r.done()
    return Trajectory(point, TimeGrid(times), states), digest


def save_trajectory(traj: Trajectory, path, digest: bytes = _binary.NO_DIGEST) -> None:
    Path(path).write_bytes(trajectory_to_bytes(traj, digest))


def load_trajectory(path) -> Trajectory:
    return read_trajectory(path)[0]


def read_trajectory(path) -> tuple[Trajectory, bytes]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return trajectory_from_bytes(blob, str(path))


def upper_triangle_columns(n_sites: int) -> list[tuple[str, int, int, int]]:
    """(name, row, col, part) per real feature; part 0 = real, 1 = imaginary.

    Row-major upper triangle, diagonals as one real column and off-diagonals
    as a real column followed by an imaginary one.
    """
    cols = []
    for r, c in zip(*np.triu_indices(n_sites)):
        if r == c:
            cols.append((f"rho_{r + 1}{c + 1}", r, c, 0))
        else:
            cols.append((f"re_rho_{r + 1}{c + 1}", r, c, 0))
            cols.append((f"im_rho_{r + 1}{c + 1}", r, c, 1))
    return cols


def write_trajectory_csv(times, states, path) -> None:
    """One row per time: t_fs followed by the upper-triangle features."""
    cols = upper_triangle_columns(states.shape[1])
    rows, cs = [c[1] for c in cols], [c[2] for c in cols]
    z = states[:, rows, cs]
    part = np.array([c[3] for c in cols], dtype=bool)
    values = np.where(part, z.imag, z.real)
    table = np.column_stack([np.asarray(times, dtype=float), values])
    header = ",".join(["t_fs"] + [c[0] for c in cols])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
