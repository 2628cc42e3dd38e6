"""Walkthrough: SDMD on the Ornstein-Uhlenbeck process with monomials.

Simulates snapshot pairs, assembles the data matrices with the analytic
drift and diffusion, and compares the estimated generator spectrum and the
first eigenfunctions with the closed-form Hermite answer.

    python demos/ou_fixed_dictionary.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from sdmd import (
    MonomialDictionary,
    OrnsteinUhlenbeck,
    SamplerSpec,
    assemble_data_matrices,
    eigenfunction_eval,
    generate_ensemble,
    gram,
    match_modes,
    spectrum,
)
from sdmd.core import export_spectrum


def main(out=None):
    ou = OrnsteinUhlenbeck(theta=1.0, mu0=0.0, sigma=0.1)
    sampler = SamplerSpec("uniform-random", [[-2.0, 2.0]], 4000)
    ens = generate_ensemble(ou, sampler, delta_t=0.1, substeps=100, seed=7)
    print(f"{ens.m} snapshot pairs, dt = {ens.delta_t}")

    d = MonomialDictionary(dim=1, max_degree=5)
    Psi_X, Psi_P, _ = assemble_data_matrices(d, ens, ou, need=("x", "prime"))
    gp = gram(Psi_X, Psi_P, delta_t=ens.delta_t)
    res = spectrum(gp)

    match = match_modes(res.generator_eigs, [0, -1, -2, -3, -4, -5])
    print("  n   estimate          |error|")
    for n, (j, err) in enumerate(zip(match.estimate_index, match.errors)):
        lam = res.generator_eigs[j]
        print(f"{n:3d}   {lam.real:+.5f}{lam.imag:+.1e}j   {err:.2e}")

    # eigenfunction n is proportional to He_n(x / s) with s^2 = sigma^2 / (2 theta)
    x = np.linspace(-1.5, 1.5, 7)[:, None]
    for n in (1, 2):
        phi = eigenfunction_eval(d, res.coeff_columns[:, match.estimate_index[n]], x).real
        exact = ou.eigenfunction(n, x)
        scale = np.dot(phi, exact) / np.dot(exact, exact)
        print(f"phi_{n} relative misfit after scaling: {np.linalg.norm(phi - scale * exact) / np.linalg.norm(phi):.2e}")

    if out is not None:
        files = export_spectrum(res, Path(out))
        print("wrote", ", ".join(str(f) for f in files))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
