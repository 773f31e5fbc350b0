import hashlib
import logging
import math

import numpy as np
import pytest
import scipy.constants as sc
from hypothesis import given, strategies as st

from ostl.errors import DataError
from ostl.exciton import (
    FMO_SHA256,
    ParameterGrid,
    SimulationPoint,
    SystemSpec,
    cm1_to_angular_frequency,
    fmo_path,
    fmo_system,
    load_grid,
    load_system,
    paper_grid,
    save_system,
    thermal_energy,
)


def write(tmp_path, text, name="h.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_site_file(tmp_path):
    s = load_system(write(tmp_path, "# dimer\n2\n0 100\n100 200\n"))
    assert s.n_sites == 2
    np.testing.assert_array_equal(s.hamiltonian, [[0, 100], [100, 200]])


def test_fmo_file_checksum_and_symmetry():
    assert hashlib.sha256(fmo_path().read_bytes()).hexdigest() == FMO_SHA256
    s = fmo_system()
    assert s.n_sites == 7
    assert np.array_equal(s.hamiltonian, s.hamiltonian.T)
    assert s.excitation_sites == (1, 6)
    assert s.initial_site(0) == 0 and s.initial_site(1) == 5


def test_asymmetric_entry_rejected(tmp_path):
    p = write(tmp_path, "3\n0 1 2\n1 0 3\n2 3.001 0\n")
    with pytest.raises(DataError, match="asymmetric"):
        load_system(p)


def test_tiny_asymmetry_is_averaged(tmp_path, caplog):
    p = write(tmp_path, "2\n0 100\n100.0000001 200\n")
    with caplog.at_level(logging.WARNING):
        s = load_system(p)
    assert s.hamiltonian[0, 1] == s.hamiltonian[1, 0]
    assert "symmetrising" in caplog.text


@pytest.mark.parametrize("text", ["", "2\n0 1\n", "2\n0 1 2\n1 0 2\n", "x\n", "1\n5\n", "2\n0 a\n1 0\n"])
def test_malformed_files(tmp_path, text):
    with pytest.raises(DataError):
        load_system(write(tmp_path, text))


def test_non_square_spec():
    with pytest.raises(DataError):
        SystemSpec(np.zeros((2, 3)))


def test_save_load_is_bit_identical(tmp_path):
    rng = np.random.default_rng(4)
    a = rng.normal(size=(5, 5)) * 100
    s = SystemSpec(a + a.T, name="rand")
    save_system(s, tmp_path / "s.txt")
    again = load_system(tmp_path / "s.txt")
    assert again.hamiltonian.tobytes() == s.hamiltonian.tobytes()
    save_system(again, tmp_path / "s2.txt")
    assert (tmp_path / "s.txt").read_bytes().splitlines()[1:] == (tmp_path / "s2.txt").read_bytes().splitlines()[1:]


def test_paper_grid():
    g = paper_grid()
    assert len(g) == 11 * 12 * 15 * 2 == 3960 == 1000 + 200 + 2760
    assert g.lambdas[0] == 10 and g.lambdas[10] == 310
    assert len(g.gammas) == 12 and g.gammas[-1] == 300
    assert len(g.temperatures) == 15 and g.temperatures[0] == 30
    assert len(g.points()) == 3960
    assert len(set(g.points())) == 3960
    assert g.maxima == (310, 300, 310)


def test_grid_invariants():
    with pytest.raises(DataError):
        ParameterGrid((10, 10), (1,), (1,))
    with pytest.raises(DataError):
        ParameterGrid((-1, 10), (1,), (1,))
    with pytest.raises(DataError):
        ParameterGrid((1,), (1,), (1,), sites=(2,))


def test_grid_file_round_trip(tmp_path):
    g = ParameterGrid((10, 160, 310), (25, 150, 300), (30, 170, 310))
    p = write(tmp_path, g.to_text(), "grid.txt")
    assert load_grid(p) == g


def test_simulation_point_validation():
    with pytest.raises(ValueError):
        SimulationPoint(2, 10, 25, 30)
    with pytest.raises(ValueError):
        SimulationPoint(0, 0, 25, 30)
    with pytest.raises(ValueError):
        SimulationPoint(0, 10, 25, -1)
    p = SimulationPoint(1, 40, 75, 290)
    assert SimulationPoint.from_array(p.as_array()) == p


def test_angular_frequency():
    assert cm1_to_angular_frequency(0) == 0
    # hand value: 2 * pi * 2.99792458e10 cm/s * 1e-12 s/ps
    hand = 2 * 3.141592653589793 * 0.0299792458
    assert cm1_to_angular_frequency(1) == pytest.approx(hand, rel=1e-15)
    assert cm1_to_angular_frequency(1) == pytest.approx(0.18836, abs=1e-5)
    assert cm1_to_angular_frequency(100) == pytest.approx(100 * cm1_to_angular_frequency(1), rel=1e-15)
    assert cm1_to_angular_frequency(1) == pytest.approx(2 * math.pi * sc.c * 100 * 1e-12, rel=1e-15)


def test_thermal_energy():
    # k_B / (h c) from scipy's CODATA set, converted from m^-1 to cm^-1
    assert thermal_energy(1) == pytest.approx(sc.k / (sc.h * sc.c) / 100, rel=1e-8)
    assert thermal_energy(1) == pytest.approx(0.695, abs=1e-3)
    assert thermal_energy(300) == pytest.approx(300 * thermal_energy(1), rel=1e-15)
    assert thermal_energy(300) == pytest.approx(208.5, abs=0.05)
    with pytest.raises(ValueError):
        thermal_energy(0)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_conversions_linear_monotone(a, b):
    fa, fb = cm1_to_angular_frequency(a), cm1_to_angular_frequency(b)
    assert (fa < fb) == (a < b) or a == b
    assert cm1_to_angular_frequency(a + b) == pytest.approx(fa + fb, rel=1e-12, abs=1e-9)


@given(st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
def test_thermal_energy_monotone(a, b):
    if a < b:
        assert thermal_energy(a) < thermal_energy(b)
