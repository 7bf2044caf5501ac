import logging

import numpy as np
import pytest

from pwhetero.errors import MandatoryFieldError, ParameterError, ParseError
from pwhetero.pipeline import parse_deck, serialize_deck
from pwhetero.pipeline.deck import band_path_or_default
from pwhetero.pipeline.workflows import deck_distances, deck_strains, recipe_from_deck

MINIMAL = """&CONTROL
calculation = 'scf'
prefix = 'tiny'
/
&SYSTEM
ibrav = 4, a = 3.89, c = 12
ecutwfc = 8
/
ATOMIC_SPECIES
Ge 72.64 Ge.pbe-mt_fhi.UPF
ATOMIC_POSITIONS (angstrom)
Ge 0.0 0.0 0.0
Ge 0.0 2.245892547 0.38
K_POINTS {gamma}
"""


def test_scf_deck_settings(scf_deck_path):
    deck = parse_deck(scf_deck_path)
    assert deck.calculation == "scf"
    assert deck.prefix == "GaP+Ge_I_3.70"
    assert deck.system["a"] == 3.89 and deck.system["c"] == 20
    assert deck.system["nat"] == 4 and len(deck.positions) == 4
    assert (deck.ecutwfc, deck.ecutrho) == (30.0, 120.0)
    assert deck.smearing == "m-p" and deck.degauss == 0.0005
    assert deck.conv_thr == 1e-8 and deck.mixing_beta == 0.7
    assert deck.vdw and deck.functional == "pbe"
    assert deck.kmesh == (10, 10, 1)
    cell = deck.cell()
    assert cell.species == ("Ga", "P", "Ge", "Ge")
    assert np.allclose(cell.positions[3], [0.0, 2.245892547, 4.08])


def test_bands_deck_path(bands_deck_path):
    deck = parse_deck(bands_deck_path)
    assert deck.calculation == "bands"
    path = deck.band_path()
    assert path.labels == ("G", "K", "M", "G")
    assert path.node_indices == (0, 20, 40, 60)
    assert len(path) == 61
    assert np.allclose(path.points[20], [0.3333333, 0.3333333, 0.0])


def test_round_trip_is_fixed_point(scf_deck_path, bands_deck_path):
    for source in (scf_deck_path, bands_deck_path, MINIMAL):
        deck = parse_deck(source)
        text = serialize_deck(deck)
        again = parse_deck(text)
        assert again == deck
        assert serialize_deck(again) == text


def test_empty_deck():
    with pytest.raises(MandatoryFieldError, match="CONTROL"):
        parse_deck("")


def test_missing_system():
    with pytest.raises(MandatoryFieldError, match="SYSTEM"):
        parse_deck("&CONTROL\ncalculation='scf'\n/\n")


def test_unterminated_namelist_reports_line():
    text = MINIMAL.replace("prefix = 'tiny'\n/\n", "prefix = 'tiny'\n")
    with pytest.raises(ParseError) as info:
        parse_deck(text)
    assert info.value.line == 4
    with pytest.raises(ParseError, match="never terminated") as info:
        parse_deck("&CONTROL\ncalculation = 'scf'\n")
    assert info.value.line == 1


def test_syntax_error_line_number():
    text = MINIMAL.replace("ecutwfc = 8", "ecutwfc 8")
    with pytest.raises(ParseError) as info:
        parse_deck(text)
    assert info.value.line == 7


def test_bad_position_line():
    text = MINIMAL.replace("Ge 0.0 0.0 0.0", "Ge 0.0 zero 0.0")
    with pytest.raises(ParseError) as info:
        parse_deck(text)
    assert info.value.line == 12


def test_unknown_key_warns(caplog):
    with caplog.at_level(logging.WARNING):
        parse_deck(MINIMAL.replace("ecutwfc = 8", "ecutwfc = 8\nfancy_flag = .true."))
    assert "fancy_flag" in caplog.text


def test_undeclared_species_and_kind():
    with pytest.raises(ParameterError, match="undeclared"):
        parse_deck(MINIMAL.replace("Ge 0.0 0.0 0.0", "Si 0.0 0.0 0.0"))
    with pytest.raises(ParameterError, match="calculation"):
        parse_deck(MINIMAL.replace("'scf'", "'relax'"))
    with pytest.raises(MandatoryFieldError):
        parse_deck(MINIMAL.replace("ecutwfc = 8\n", ""))


def test_overrides(scf_deck_path):
    deck = parse_deck(scf_deck_path)
    changed = deck.with_overrides({"system.ecutwfc": "8", "mixing_beta": "0.3", "hetero.electrons": "'wells'"})
    assert changed.ecutwfc == 8.0 and changed.ecutrho == 120.0
    assert changed.mixing_beta == 0.3
    assert changed.hetero["electrons"] == "wells"
    assert deck.ecutwfc == 30.0
    with pytest.raises(ParameterError):
        deck.with_overrides({"bogus_key": "1"})
    assert changed.digest() != deck.digest()


def test_hetero_recipe_without_positions():
    text = """&CONTROL
calculation = 'bind-scan'
/
&SYSTEM
ibrav = 4, a = 3.89, c = 20, ecutwfc = 8
/
&HETERO
top = 'Ge', bottom = 'GaP', pattern = 'II'
d_min = 3.0, d_max = 3.4, d_step = 0.2
strain_list = '0.0 0.01'
/
"""
    deck = parse_deck(text)
    recipe = recipe_from_deck(deck)
    assert recipe.pattern == "II"
    assert deck_distances(deck) == (3.0, 3.2, 3.4)
    assert deck_strains(deck) == (0.0, 0.01)
    assert parse_deck(serialize_deck(deck)) == deck


def test_default_band_path():
    deck = parse_deck(MINIMAL)
    path = band_path_or_default(deck, deck.lattice())
    assert path.labels == ("G", "K", "M", "G") and len(path) == 61
