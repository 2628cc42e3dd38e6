import warnings

import numpy as np
import pytest

from sdmd.coef import (
    BinnedPredictor,
    CoefficientEstimate,
    ExtrapolationWarning,
    estimate_coefficients,
    estimate_diffusion,
    estimate_drift,
)
from sdmd.core import assemble_data_matrices, gram, spectrum, match_modes
from sdmd.dictionary import MonomialDictionary
from sdmd.errors import InsufficientDataError, InvalidArgumentError
from sdmd.models import OrnsteinUhlenbeck
from sdmd.simulate import SamplerSpec, generate_ensemble


def _ou_pairs(n_traj, n_eval=1, seed=0):
    ou = OrnsteinUhlenbeck()
    s = SamplerSpec("uniform-random", [[-2.0, 2.0]], n_traj)
    return generate_ensemble(ou, s, 0.01, 10, seed=seed, n_eval=n_eval)


def test_stationary_data_gives_zero_drift():
    X = np.linspace(-1, 1, 200)[:, None]
    est = estimate_coefficients((X, X.copy(), 0.1), bins=5)
    np.testing.assert_allclose(est.drift(X), 0.0, atol=1e-12)
    np.testing.assert_allclose(est.diffusion(X), 0.0, atol=1e-6)


def test_noiseless_data_gives_zero_diffusion():
    X = np.linspace(-2, 2, 400)[:, None]
    Y = X - 0.1 * X
    est = estimate_coefficients((X, Y, 0.1), bins=8)
    np.testing.assert_allclose(est.drift(X), -X, atol=1e-10)
    np.testing.assert_allclose(est.diffusion(X), 0.0, atol=1e-6)


def test_ou_estimation_accuracy():
    ens = _ou_pairs(100_000)
    est = estimate_coefficients(ens, bins=50)
    q = np.linspace(-1.5, 1.5, 101)[:, None]
    assert np.max(np.abs(est.drift(q)[:, 0] + q[:, 0])) <= 0.1
    q1 = np.linspace(-1, 1, 51)[:, None]
    sig = est.diffusion(q1)[:, 0, 0]
    assert abs(sig.mean() - 0.1) <= 0.02
    assert np.all(est.diffusion_var >= 0)


def test_drift_error_non_increasing_with_samples():
    q = np.linspace(-1.5, 1.5, 61)[:, None]
    errs = []
    for n in (2_000, 20_000, 200_000):
        est = estimate_coefficients(_ou_pairs(n, seed=n), bins=20)
        errs.append(np.max(np.abs(est.drift(q)[:, 0] + q[:, 0])))
    for a, b in zip(errs, errs[1:]):
        assert b <= 1.2 * a


def test_plug_in_runs_sdmd():
    ens = _ou_pairs(50_000, seed=3)
    est = estimate_coefficients(ens, bins=40)
    d = MonomialDictionary(1, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        Psi_X, Psi_P, _ = assemble_data_matrices(d, ens, est, need=("x", "prime"))
    lam = spectrum(gram(Psi_X, Psi_P, delta_t=ens.delta_t)).generator_eigs
    assert match_modes(lam, [0, -1, -2, -3]).errors.max() < 0.3


def test_extrapolation_flag_and_empty_bins():
    X = np.concatenate([np.linspace(-1, -0.5, 50), np.linspace(0.5, 1, 50)])[:, None]
    est = estimate_coefficients((X, 0.9 * X, 0.1), bins=8)
    with pytest.warns(ExtrapolationWarning):
        est.drift(np.array([[1.5]]))
    assert est.extrapolated
    with pytest.raises(InsufficientDataError):
        est.drift(np.array([[-0.1]]))


def test_json_roundtrip(tmp_path):
    ens = _ou_pairs(5_000, seed=4)
    est = estimate_coefficients(ens, bins=10)
    est.save(tmp_path / "est.json")
    back = CoefficientEstimate.load(tmp_path / "est.json")
    q = np.linspace(-1, 1, 7)[:, None]
    np.testing.assert_array_equal(back.drift(q), est.drift(q))
    np.testing.assert_array_equal(back.diffusion(q), est.diffusion(q))


def test_network_predictor_option():
    ens = _ou_pairs(3_000, seed=5)
    pred = estimate_drift(ens, kind="network", hidden=8, epochs=300, seed=1)
    est = estimate_diffusion(ens, pred, bins=10)
    q = np.linspace(-1, 1, 11)[:, None]
    assert np.all(np.isfinite(est.drift(q)))
    with pytest.raises(InvalidArgumentError):
        estimate_drift(ens, kind="kernel")


def test_binned_predictor_recovers_affine_map():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(500, 2))
    Y = X @ np.array([[0.5, 0.1], [-0.2, 0.9]]) + [0.3, -0.1]
    p = BinnedPredictor.fit(X, Y, bins=3)
    np.testing.assert_allclose(p.predict(X), Y, atol=1e-10)
