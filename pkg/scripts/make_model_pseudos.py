"""Regenerate the bundled analytic model pseudopotential tables.

These are smooth error-function-screened Coulomb models, not fitted to any
element; they exist so every code path runs without external data.
"""

import math
import sys
from pathlib import Path

import numpy as np

from pwhetero.pseudo.potential import (
    Pseudopotential,
    coulomb_model,
    erf_model,
    radial_charge,
    save_pseudo,
)

# element: (Z, sigma, gauss amplitude, gauss width, projectors [(l, width, D)])
MODELS = {
    "Ge": (4.0, 1.0, 1.5, 0.7, [(0, 0.6, 1.0)]),
    "Ga": (3.0, 1.1, 1.0, 0.7, []),
    "Al": (3.0, 1.1, 0.8, 0.7, []),
    "P": (5.0, 0.85, 2.0, 0.6, [(0, 0.55, 0.8)]),
    "Si": (4.0, 1.0, 1.2, 0.7, []),
}
R_C = 4.5


def with_wavefunction(ps):
    r = ps.r_grid
    psi = np.exp(-r / 1.2) * (r <= 12.0)
    norm = radial_charge(psi, r, ps.r_c)
    return Pseudopotential(
        ps.element, ps.z_valence, r, ps.v_local, ps.projectors, ps.r_c,
        reference_norms={0: norm}, wavefunctions={0: psi},
    )


def main(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for el, (z, sigma, amp, width, projs) in MODELS.items():
        ps = erf_model(el, z, sigma, R_C, amp, width, projs)
        ps = with_wavefunction(ps)
        note = (
            f"analytic model: v(r) = -{z:g} erf(r/{sigma:g})/r + {amp:g} exp(-r^2/(2*{width:g}^2))\n"
            f"projectors (l, gaussian width, D): {projs}\n"
            "not a fitted pseudopotential; for testing and desk-scale workflows"
        )
        save_pseudo(ps, outdir / f"{el}.model.psp", comment=note)
    save_pseudo(coulomb_model("H", 1.0), outdir / "H.coulomb.psp", comment="bare Coulomb -1/r")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "src/pwhetero/data/pseudo")
