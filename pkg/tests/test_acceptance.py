"""Acceptance suite: one group of tests per criterion.

Each test carries a ``criterion`` marker; conftest prints one pass/fail line
per criterion at the end of the run. Every check runs at its stated
tolerance and compares against an oracle built independently of the
library code under test.
"""

import hashlib
import io
import math
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import brute_force_d2, evjen_madelung, gaussian_blob_hartree

from pwhetero.kgrid import hexagonal_path, monkhorst_pack
from pwhetero.pipeline import distance_list, parse_deck
from pwhetero.pipeline.cli import main
from pwhetero.pipeline.workflows import settings_from_deck
from pwhetero.postproc import BandStructure, analyze_gap, band_structure
from pwhetero.pseudo import Pseudopotential, check_norm_conservation, erf_model, grimme_d2, load_d2_params, radial_charge
from pwhetero.pwbasis import DensityGrid, FFTGrid, build_basis, fft_grid
from pwhetero.scf import (
    KsSystem,
    ScfOptions,
    apply_hamiltonian,
    default_eta,
    ewald_energy,
    gaussian_well_system,
    scf_loop,
)
from pwhetero.scf.hamiltonian import hamiltonian_matrix
from pwhetero.scf.loop import atomic_wells_system
from pwhetero.structure import GAP, GERMANENE, Cell, Layer, build_heterobilayer, hexagonal_lattice
from pwhetero.units import ANGSTROM_IN_BOHR, HARTREE_IN_EV, RYDBERG_IN_HARTREE
from pwhetero.xc import evaluate_xc, hartree, lda_exchange, pz_correlation

BOHR = 1.0 / ANGSTROM_IN_BOHR  # Angstrom per Bohr
criterion = pytest.mark.criterion


def _deck(name):
    from conftest import DECKS

    return parse_deck(str(DECKS / name))


# --- 1 ---------------------------------------------------------------------------


def _free_electron_levels(cell, k_frac, ecut_ry, n):
    """Lowest ``n`` values of |k+G|^2/2 (Ha) over an explicit Miller box."""
    a = cell.lattice * ANGSTROM_IN_BOHR
    b = 2 * math.pi * np.linalg.inv(a).T
    kc = np.asarray(k_frac) @ b
    span = [int(math.sqrt(ecut_ry) * np.linalg.norm(a[i]) / (2 * math.pi)) + 2 for i in range(3)]
    axes = [np.arange(-m, m + 1) for m in span]
    miller = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    q = kc + miller @ b
    kin = 0.5 * np.einsum("ij,ij->i", q, q)
    return np.sort(kin[2 * kin <= ecut_ry * 2 * RYDBERG_IN_HARTREE])[:n]


def _empty_lattice_error(ecut_ry):
    deck = _deck("GeAlP.b-nscf.in")
    cell, path = deck.cell(), deck.band_path()
    assert len(path) == 61 and path.node_indices == (0, 20, 40, 60)
    start = time.perf_counter()
    result = scf_loop(KsSystem.free_electron(cell), ScfOptions(ecut_wfc=ecut_ry, kmesh=(1, 1, 1), degauss=0.01))
    bands = band_structure(result, path, n_bands=8)
    elapsed = time.perf_counter() - start
    computed = bands.energies / HARTREE_IN_EV + result.solution.fermi_level
    error = max(
        np.abs(row - _free_electron_levels(cell, k, ecut_ry, 8)).max() for k, row in zip(path.points, computed)
    )
    return error, elapsed


@criterion(1, "empty-lattice bands equal |k+G|^2/2 along the deck path")
def test_c01_empty_lattice_runtime():
    error, elapsed = _empty_lattice_error(4.0)
    print(f"empty lattice at 4 Ry: max error {error:.2e} Ha in {elapsed:.2f} s")
    assert error < 1e-10
    assert elapsed < 5.0


@criterion(1, "empty-lattice bands equal |k+G|^2/2 along the deck path")
def test_c01_empty_lattice_at_deck_cutoff():
    error, elapsed = _empty_lattice_error(30.0)
    print(f"empty lattice at 30 Ry: max error {error:.2e} Ha in {elapsed:.2f} s")
    assert error < 1e-10


# --- 2 ---------------------------------------------------------------------------


@criterion(2, "Monkhorst-Pack 10x10x1 grid matches (2r-11)/20")
def test_c02_monkhorst_pack():
    mesh = monkhorst_pack(10, 10, 1)
    assert len(mesh) == 100
    assert abs(mesh.weights.sum() - 1.0) < 1e-12
    axis = [(2 * r - 11) / 20 for r in range(1, 11)]
    want = sorted((x, y, 0.0) for x in axis for y in axis)
    assert sorted(map(tuple, mesh.points.tolist())) == want


# --- 3 ---------------------------------------------------------------------------


@criterion(3, "Slater exchange at rs=2")
def test_c03_slater_exchange():
    rs = 2.0
    cell = Cell(np.eye(3) * 6.0)
    grid = FFTGrid(cell, (8, 8, 8))
    n = np.full(grid.dims, 3.0 / (4.0 * math.pi * rs**3))
    eps, _ = lda_exchange(n)
    closed = -(3.0 / 4.0) * (9.0 / (4.0 * math.pi**2)) ** (1.0 / 3.0) / rs
    assert np.abs(eps - closed).max() < 1e-7
    assert np.abs(eps + 0.2290826).max() < 1e-7


# --- 4 ---------------------------------------------------------------------------


@criterion(4, "PZ seam and finite-difference v_xc (LDA, PBE)")
def test_c04_pz_seam():
    n = lambda rs: 3.0 / (4.0 * math.pi * rs**3)
    below = pz_correlation(np.array([n(1.0 - 1e-9)]))[0][0]
    above = pz_correlation(np.array([n(1.0 + 1e-9)]))[0][0]
    assert abs(below - above) < 1e-4


@criterion(4, "PZ seam and finite-difference v_xc (LDA, PBE)")
@pytest.mark.parametrize("functional", ["pz", "pbe"])
def test_c04_potential_finite_difference(functional):
    cell = Cell(np.eye(3) * 8.0 * BOHR)
    grid = FFTGrid(cell, (12, 12, 12))
    frac = grid.points @ np.linalg.inv(grid.lattice)
    n = 0.05 + 0.01 * np.cos(2 * math.pi * frac[..., 0]) + 0.006 * np.sin(2 * math.pi * (frac[..., 1] + 2 * frac[..., 2]))
    v = evaluate_xc(grid, n, functional).potential
    rng = np.random.default_rng(2024)
    for flat in rng.choice(n.size, 20, replace=False):
        idx = np.unravel_index(flat, n.shape)
        h = 1e-4 * n[idx]
        up, dn = n.copy(), n.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (evaluate_xc(grid, up, functional).total - evaluate_xc(grid, dn, functional).total) / (2 * h * grid.dv)
        assert abs(v[idx] - fd) < 1e-5 * abs(fd)


# --- 5 ---------------------------------------------------------------------------


@criterion(5, "Hartree energy of a Gaussian blob at 30/120 Ry")
def test_c05_gaussian_blob():
    side, s = 12.0, 0.45  # Bohr
    cell = Cell(np.eye(3) * side * BOHR)
    grid = FFTGrid(cell, fft_grid(cell, 120.0, 30.0))
    r = grid.points - side / 2
    n = np.exp(-np.einsum("...i,...i", r, r) / (2 * s * s)) / (2 * math.pi * s * s) ** 1.5
    _, energy = hartree(DensityGrid(n, cell))
    oracle = gaussian_blob_hartree(side, s)
    assert abs(energy - oracle) / oracle < 1e-4


# --- 6 ---------------------------------------------------------------------------


@criterion(6, "Ewald rocksalt Madelung constant and eta invariance")
def test_c06_rocksalt():
    r0 = 1.0
    frac = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    cell = Cell.from_fractional(
        np.eye(3) * 2 * r0 * BOHR, ["Na"] * 4 + ["Cl"] * 4, np.vstack([frac, frac + 0.5]), valence_electrons=(1,) * 8
    )
    madelung = -ewald_energy(cell, [1.0] * 4 + [-1.0] * 4) * r0 / 4
    assert abs(madelung - evjen_madelung(24)) < 1e-5
    assert abs(madelung - 1.747565) < 1e-5


@criterion(6, "Ewald rocksalt Madelung constant and eta invariance")
@pytest.mark.parametrize("scale", [0.7, 1.3])
def test_c06_eta_invariance(scale):
    cell = build_heterobilayer(GERMANENE, GAP, "I", 3.2, c=12.0)
    eta = default_eta(cell.volume * ANGSTROM_IN_BOHR**3)
    e0 = ewald_energy(cell, allow_charged=True)
    assert abs(ewald_energy(cell, eta=scale * eta, allow_charged=True) - e0) < 1e-10
    frac = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    salt = Cell.from_fractional(
        np.eye(3) * 2 * BOHR, ["Na"] * 4 + ["Cl"] * 4, np.vstack([frac, frac + 0.5]), valence_electrons=(1,) * 8
    )
    q = [1.0] * 4 + [-1.0] * 4
    eta_salt = default_eta(salt.volume * ANGSTROM_IN_BOHR**3)
    assert abs(ewald_energy(salt, q, eta=scale * eta_salt) - ewald_energy(salt, q)) < 1e-10


# --- 7 ---------------------------------------------------------------------------


@criterion(7, "Grimme-D2 lattice sum equals the brute-force image sum")
@pytest.mark.parametrize("d", [round(x, 1) for x in distance_list()])
def test_c07_d2_brute_force(d):
    params = load_d2_params()
    cell = build_heterobilayer(Layer(("Ge", "Ge"), a=3.89, buckling=0.38), GAP, "I", d)
    assert abs(grimme_d2(cell, params, r_cutoff=40.0) - brute_force_d2(cell, params, 40.0)) < 1e-12


# --- 8 ---------------------------------------------------------------------------


@criterion(8, "SCF on the Gaussian-well system at beta 0.7")
def test_c08_gaussian_well_scf():
    options = ScfOptions(ecut_wfc=12, mixing_beta=0.7, conv_thr=1e-8, max_iter=100)
    assert options.resolved()["kmesh"] == [1, 1, 1]
    first = scf_loop(gaussian_well_system(), options)
    assert first.converged and first.iterations <= 100
    assert first.solution.n_electrons == 2
    assert first.records[-1].delta / RYDBERG_IN_HARTREE < 1e-8
    assert all(r.route_difference < 1e-6 for r in first.records)
    again = scf_loop(gaussian_well_system(), options, initial_density=first.final_density)
    assert again.converged
    assert abs(again.total_energy - first.total_energy) < 1e-10
    assert all(r.route_difference < 1e-6 for r in again.records)


# --- 9 ---------------------------------------------------------------------------


def _operators():
    """(label, basis, v_eff, projectors) for each kind of operator the solver assembles."""
    ops = []
    cube = Cell(np.eye(3) * 4.0)
    tiny = build_basis(cube, (0.0, 0.0, 0.0), 1.0)
    grid = FFTGrid(cube, tiny.fft_dims)
    z = grid.points[..., 2] / grid.lattice[2, 2]
    ops.append(("tiny", tiny, 0.4 * np.cos(2 * math.pi * z) - 0.1 * np.sin(4 * math.pi * z), None))
    hexa = Cell(hexagonal_lattice(3.9, 8.0))
    free = build_basis(hexa, (0.1, 0.2, 0.0), 6.0)
    ops.append(("free", free, np.zeros(free.fft_dims), None))
    mono = Cell.from_fractional(hexagonal_lattice(3.95, 7.0), ["Ge", "Ge"], [[0, 0, 0.45], [1 / 3, 2 / 3, 0.5043]])
    ks = scf_loop(KsSystem.with_bundled_pseudos(mono), ScfOptions(ecut_wfc=6, mixing_beta=0.5, max_iter=3, kmesh=(2, 2, 1)))
    wells = scf_loop(
        atomic_wells_system(build_heterobilayer(GERMANENE, GAP, "I", 3.3, c=10.0)), ScfOptions(ecut_wfc=5, kmesh=(2, 2, 1))
    )
    well = scf_loop(gaussian_well_system(), ScfOptions(ecut_wfc=6, degauss=0.01))
    for label, result in (("ks", ks), ("wells", wells), ("gaussian-well", well)):
        for i, k in enumerate(result.solution.kpoints):
            basis, proj = result.context.basis(k)
            ops.append((f"{label}-k{i}", basis, result.potential, proj))
    return ops


@criterion(9, "Hamiltonian dense oracle and Hermiticity")
def test_c09_dense_oracle():
    label, basis, v, _ = _operators()[0]
    assert len(basis) <= 8
    n = len(basis)
    # oracle: H_GG' = kinetic on the diagonal plus v(G - G') from a direct sum over the grid
    points = FFTGrid(Cell(np.eye(3) * 4.0), basis.fft_dims).points
    b = 2 * math.pi * np.linalg.inv(np.eye(3) * 4.0 * ANGSTROM_IN_BOHR).T
    dense = np.diag(basis.kinetic).astype(complex)
    for i in range(n):
        for j in range(n):
            g = (basis.gvectors[i] - basis.gvectors[j]) @ b
            dense[i, j] += np.mean(v * np.exp(-1j * (points @ g)))
    psi = np.random.default_rng(5).normal(size=(n, 3)) * (1 - 0.3j)
    assert np.abs(apply_hamiltonian(basis, v, None, psi) - dense @ psi).max() < 1e-12
    assert np.abs(hamiltonian_matrix(basis, v) - dense).max() < 1e-12


@criterion(9, "Hamiltonian dense oracle and Hermiticity")
def test_c09_hermiticity_of_every_operator():
    rng = np.random.default_rng(77)
    for label, basis, v, proj in _operators():
        for _ in range(5):
            phi = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
            psi = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
            left = np.vdot(phi, apply_hamiltonian(basis, v, proj, psi))
            right = np.conj(np.vdot(psi, apply_hamiltonian(basis, v, proj, phi)))
            assert abs(left - right) < 1e-10 * max(1.0, abs(left)), label


# --- 10 --------------------------------------------------------------------------


def _scan_oracle(valence, conduction):
    iv = max(range(len(valence)), key=lambda i: (valence[i], -i))
    ic = min(range(len(conduction)), key=lambda i: (conduction[i], i))
    return iv, ic, max(0.0, conduction[ic] - valence[iv])


@criterion(10, "gap analysis vs brute-force scan and label grammar")
def test_c10_random_two_band_models():
    rng = np.random.default_rng(1000)
    for _ in range(100):
        path = hexagonal_path(int(rng.integers(2, 9)))
        theta = rng.uniform(0, 2 * math.pi, len(path))
        shift = rng.uniform(-1.5, 0.5)
        v = -1 - np.cos(theta) + shift * rng.uniform(0, 1)
        c = 1 + np.cos(theta) - shift * rng.uniform(0, 1)
        lo, hi = np.minimum(v, c), np.maximum(v, c)
        report = analyze_gap(BandStructure(path, np.column_stack([lo, hi]), 2))
        iv, ic, gap = _scan_oracle(lo, hi)
        assert (report.vbm[0], report.cbm[0]) == (iv, ic)
        assert report.gap == pytest.approx(0.0 if gap * 1000 < 1e-6 else gap * 1000, abs=1e-9)
        assert report.direct == (iv == ic)
        if report.gap > 0:
            assert report.kind == ("Direct" if iv == ic else "Indirect")


@criterion(10, "gap analysis vs brute-force scan and label grammar")
def test_c10_label_grammar():
    path = hexagonal_path(6, hexagonal_lattice(3.9, 10.0))
    g, k, m, _ = path.node_indices

    def bands(iv, ic):
        v, c = np.full(len(path), -1.0), np.full(len(path), 1.0)
        v[iv], c[ic] = -0.2, 0.3
        return BandStructure(path, np.column_stack([v, c]), 2)

    assert analyze_gap(bands(k, k)).position == "K"
    assert analyze_gap(bands(m, g + 2)).position == "M+(G--K)"
    assert analyze_gap(bands(g + 2, m)).position == "M+(G--K)"
    assert analyze_gap(bands(m, g + 2)).kind == "Indirect"
    assert analyze_gap(bands(m, g)).position == "M-G"
    assert analyze_gap(bands(g + 2, k + 3)).position == "(G--K)+(K--M)"


# --- 11 --------------------------------------------------------------------------


@criterion(11, "norm-conservation validator")
def test_c11_norm_validator():
    base = erf_model("Ge", 4.0, 1.0, 4.5)
    ref = 0.8
    ps = Pseudopotential(base.element, base.z_valence, base.r_grid, base.v_local, (), base.r_c, {0: ref})
    wf = np.exp(-ps.r_grid / 1.2)
    wf = wf * math.sqrt(ref / radial_charge(wf, ps.r_grid, ps.r_c))
    exact = check_norm_conservation(ps, {0: wf}, tolerance=1e-3)
    assert exact.passed and exact.deviations[0] < 1e-14
    perturbed = check_norm_conservation(ps, {0: 1.01 * wf}, tolerance=1e-3)
    assert not perturbed.passed


# --- 12 --------------------------------------------------------------------------


@criterion(12, "verbatim decks parse and resolve to the documented settings")
@pytest.mark.parametrize("name", ["GeAlP.scf.in", "GeAlP.b-nscf.in"])
def test_c12_decks(name):
    deck = _deck(name)
    scf = settings_from_deck(deck).resolved()["scf"]
    assert (scf["ecut_wfc"], scf["ecut_rho"]) == (30.0, 120.0)
    assert scf["smearing"] == "m-p" and scf["degauss"] == 0.0005
    assert scf["conv_thr"] == 1e-8 and scf["mixing_beta"] == 0.7
    assert deck.vdw and deck.system["vdw_corr"].lower() == "grimme-d2"
    if deck.calculation == "scf":
        assert scf["kmesh"] == [10, 10, 1]
    else:
        assert deck.calculation == "bands" and len(deck.band_path()) == 61


# --- 13 --------------------------------------------------------------------------

BINDING_HEADER = "Configuration\tE_b/Ge atom (meV)\tE_g (meV) with LDA*\tE_g (meV) with HSE*\td (Å)"
GAP_HEADER = "Interlayer distance, d(Å)\tBand Gap (meV)\tPosition of Band Gap (1 st BZ)\tType of Band Gap"
DEFAULT_D = [2.5, 2.7, 2.9, 3.1, 3.3, 3.5, 3.7, 3.9, 4.1, 4.3, 4.5]


def _cli(*argv):
    return main([str(a) for a in argv], out=io.StringIO())


@criterion(13, "scan tables: headers, column order and default d range")
def test_c13_table_schemas(tmp_path):
    from conftest import DECKS

    deck = str(DECKS / "GeAlP.scf.in")
    cheap = ["--set", "system.ecutwfc=5", "--set", "system.ecutrho=20", "--set", "system.c=10"]
    assert _cli("bind-scan", "--deck", deck, "--workdir", tmp_path, *cheap, "--set", "hetero.electrons='none'") == 0
    assert _cli("gap-scan", "--deck", deck, "--workdir", tmp_path, *cheap, "--set", "hetero.electrons='wells'") == 0
    out = tmp_path / "GaP+Ge_I_3.70"
    assert (out / "table41.tsv").read_text().splitlines()[0] == BINDING_HEADER
    rows = (out / "binding.tsv").read_text().splitlines()
    assert [float(r.split("\t")[0]) for r in rows[1:]] == DEFAULT_D
    gap_rows = (out / "gap_vs_d.tsv").read_text().splitlines()
    assert gap_rows[0] == GAP_HEADER
    assert [float(r.split("\t")[0]) for r in gap_rows[1:]] == DEFAULT_D
    assert distance_list() == pytest.approx(DEFAULT_D, abs=1e-12)


# --- 14 --------------------------------------------------------------------------


def _all_pipelines(workdir):
    from conftest import DECKS

    scf, bands = str(DECKS / "GeAlP.scf.in"), str(DECKS / "GeAlP.b-nscf.in")
    cheap = [
        "--set", "hetero.electrons='wells'", "--set", "system.ecutwfc=6",
        "--set", "system.ecutrho=24", "--set", "system.c=10",
    ]
    scans = cheap + ["--set", "hetero.d_list='3.0 3.4 3.8'", "--set", "hetero.strain_list='0.0 0.02'"]
    steps = [("scf", scf, cheap), ("bands", bands, cheap), ("dos", scf, cheap), ("pdos", scf, cheap),
             ("cdd", scf, cheap), ("bind-scan", scf, scans), ("gap-scan", scf, scans), ("strain-scan", scf, scans)]
    for command, deck, extra in steps:
        assert _cli(command, "--deck", deck, "--workdir", workdir, *extra) == 0, command
    out = Path(workdir) / "GaP+Ge_I_3.70"
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.iterdir())
        if not p.name.startswith("manifest.")
    }


@criterion(14, "identical reruns give byte-identical result files")
def test_c14_determinism(tmp_path):
    first = _all_pipelines(tmp_path / "first")
    second = _all_pipelines(tmp_path / "second")
    assert len(first) >= 20
    assert first == second
