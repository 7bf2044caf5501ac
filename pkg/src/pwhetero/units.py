"""Unit conversions.

Everything inside the engine runs in Hartree atomic units (Bohr, Hartree).
Geometry is accepted in Angstrom and cutoffs in Rydberg, as in pw.x decks.
Values are CODATA 2018.
"""

BOHR_IN_ANGSTROM = 0.529177210903
ANGSTROM_IN_BOHR = 1.0 / BOHR_IN_ANGSTROM

HARTREE_IN_EV = 27.211386245988
RYDBERG_IN_HARTREE = 0.5
HARTREE_IN_RYDBERG = 2.0

# J/mol per Hartree (CODATA 2018: E_h * N_A)
HARTREE_IN_J_PER_MOL = 2625499.639479
# nm in Bohr
NM_IN_BOHR = 10.0 * ANGSTROM_IN_BOHR


def ry_to_ha(value):
    return value * RYDBERG_IN_HARTREE


def ha_to_ry(value):
    return value * HARTREE_IN_RYDBERG


def ha_to_ev(value):
    return value * HARTREE_IN_EV


def ha_to_mev(value):
    return value * HARTREE_IN_EV * 1000.0


def angstrom_to_bohr(value):
    return value * ANGSTROM_IN_BOHR


def bohr_to_angstrom(value):
    return value * BOHR_IN_ANGSTROM
