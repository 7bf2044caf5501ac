"""UPF file-name grammar: ``element.explanation.UPF``.

The explanation is a dash-separated list: optional ``rel``, a mandatory
exchange-correlation tag, optional valence-state letters (s, p, d, f, n),
then origin tokens (generation method, version, author).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ..errors import MandatoryFieldError, ParseError

log = logging.getLogger(__name__)

XC_TAGS = ("pbe", "pz", "vwn", "coulomb", "blyp", "pw91")
STATE_TAGS = ("s", "p", "d", "f", "n")

_ELEMENTS = set(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni
    Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe
    Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg
    Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu""".split()
)


@dataclass(frozen=True)
class PseudoMeta:
    element: str
    relativistic: bool
    xc_tag: str
    state_tags: tuple = ()
    origin_tags: tuple = ()


def parse_upf_name(filename):
    """Split a UPF file name into its grammar fields.

    >>> parse_upf_name("Ge.pbe-mt_fhi.UPF").origin_tags
    ('mt_fhi',)
    """
    name = str(filename).rsplit("/", 1)[-1]
    if not name.lower().endswith(".upf"):
        raise ParseError(f"{name!r} does not end in .UPF")
    stem = name[: -len(".upf")]
    element, _, explanation = stem.partition(".")
    if not element:
        raise ParseError(f"{name!r} has no element field")
    if element not in _ELEMENTS:
        log.warning("%r is not a known element symbol", element)
    tokens = [t for t in explanation.split("-") if t] if explanation else []

    relativistic = False
    if tokens and tokens[0].lower() == "rel":
        relativistic = True
        tokens = tokens[1:]
    if not tokens or tokens[0].lower() not in XC_TAGS:
        raise MandatoryFieldError(
            f"{name!r}: mandatory exchange-correlation field missing "
            f"(expected one of {', '.join(XC_TAGS)})"
        )
    xc = tokens[0].lower()
    states, origin = [], []
    for tok in tokens[1:]:
        if tok.lower() in STATE_TAGS and not origin:
            states.append(tok.lower())
        else:
            origin.append(tok)
    return PseudoMeta(element, relativistic, xc, tuple(states), tuple(origin))
