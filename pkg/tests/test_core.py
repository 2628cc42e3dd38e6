import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmd.core import (
    GramPair,
    assemble_data_matrices,
    convert_eigs,
    default_gamma,
    edmd_operator,
    eigenfunction_eval,
    export_gram,
    export_spectrum,
    gedmd_operator,
    gram,
    match_modes,
    operator_spectrum,
    sdmd_operator,
    spectrum,
)
from sdmd.dictionary import MonomialDictionary
from sdmd.errors import DomainError, InvalidArgumentError, SingularGramError
from sdmd.models import OrnsteinUhlenbeck
from sdmd.simulate import SamplerSpec, generate_ensemble, sample_initial_states


def _hand(hand_data):
    X, d, ou = hand_data
    Psi_X, Psi_P, _ = assemble_data_matrices(d, (X, None), ou, need=("x", "prime"))
    return Psi_X, Psi_P


def test_assemble_examples(hand_data):
    X, d, ou = hand_data
    Psi_X, Psi_P = _hand(hand_data)
    np.testing.assert_array_equal(Psi_X, [[1, -1], [1, 0], [1, 1]])
    _, _, Psi_Y = assemble_data_matrices(d, (X, X), need=("y",))
    np.testing.assert_array_equal(Psi_Y, Psi_X)
    with pytest.raises(InvalidArgumentError):
        assemble_data_matrices(d, (X, None), None, need=("prime",))
    with pytest.raises(InvalidArgumentError):
        assemble_data_matrices(MonomialDictionary(2, 1), (X, X))


def test_hand_gram_operator_spectrum(hand_data):
    Psi_X, Psi_P = _hand(hand_data)
    gp = gram(Psi_X, Psi_P, gamma=0.0, delta_t=0.1)
    np.testing.assert_allclose(gp.G_hat, [[1, 0], [0, 2 / 3]], atol=1e-12)
    np.testing.assert_allclose(gp.H_hat, [[0, 0], [0, -2 / 3]], atol=1e-12)
    K = sdmd_operator(gp).matrix
    np.testing.assert_allclose(K, np.diag([1.0, 0.9]), atol=1e-12)
    A = gedmd_operator(gp).matrix
    np.testing.assert_allclose(A, np.diag([0.0, -1.0]), atol=1e-12)
    res = spectrum(gp)
    np.testing.assert_allclose(res.generator_eigs, [0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(res.semigroup_eigs, [1.0, 0.9], atol=1e-12)
    # second eigenfunction is proportional to x
    X = np.linspace(-1, 1, 5)[:, None]
    phi = eigenfunction_eval(hand_data[1], res.coeff_columns[:, 1], X)
    np.testing.assert_allclose(phi / phi[-1], X[:, 0], atol=1e-12)
    ones = eigenfunction_eval(hand_data[1], np.array([1.0, 0.0]), X)
    np.testing.assert_array_equal(ones, 1.0)


def test_diagonal_spectrum_example():
    gp = GramPair(np.eye(2), np.diag([0.0, -1.0]), m=1, gamma=0.0, delta_t=0.1)
    res = spectrum(gp)
    np.testing.assert_allclose(res.generator_eigs, [0, -1])
    np.testing.assert_allclose(res.semigroup_eigs, [1, 0.9])


def test_stationary_dictionary_gives_identity():
    gp = GramPair(np.diag([1.0, 2.0]), np.zeros((2, 2)), m=1, gamma=0.0, delta_t=0.1)
    np.testing.assert_array_equal(sdmd_operator(gp).matrix, np.eye(2))
    assert np.all(gedmd_operator(np.ones((3, 2)) * [1, 2], np.zeros((3, 2)), gamma=1e-3).matrix == 0)


def test_edmd_identity_evolution_tends_to_identity():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(50, 4))
    for gamma, tol in ((1e-6, 1e-5), (1e-10, 1e-9)):
        K = edmd_operator(P, P, gamma=gamma, delta_t=0.1).matrix
        assert np.max(np.abs(K - np.eye(4))) < tol


def test_singular_gram_raises():
    with pytest.raises(SingularGramError, match="gamma"):
        GramPair(np.zeros((2, 2)), np.zeros((2, 2)), m=1, gamma=0.0)


def test_default_gamma_relative():
    G = np.diag([2.0, 4.0])
    assert default_gamma(G) == pytest.approx(3e-8)
    assert GramPair(G, np.zeros((2, 2)), m=1).gamma == pytest.approx(3e-8)


def _ou_ensemble(m=2000, seed=0, degree=4):
    ou = OrnsteinUhlenbeck()
    ens = generate_ensemble(ou, SamplerSpec("uniform-random", [[-2.0, 2.0]], m), 0.1, 10, seed=seed)
    d = MonomialDictionary(1, degree)
    return ou, ens, d, assemble_data_matrices(d, ens, ou)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.0, 1e-8, 1e-4, None]), st.floats(1e-3, 0.5))
def test_identity_invariant(seed, gamma, dt):
    _, _, _, (Psi_X, Psi_P, _) = _ou_ensemble(300, seed)
    gp = gram(Psi_X, Psi_P, gamma=gamma, delta_t=dt)
    K = sdmd_operator(gp).matrix
    ref = np.eye(gp.size) + dt * np.linalg.solve(gp.regularized(), gp.H_hat)
    assert np.max(np.abs(K - ref)) <= 1e-13 * max(1.0, np.max(np.abs(K)))
    A = gedmd_operator(gp).matrix
    assert np.max(np.abs(K - np.eye(gp.size) - dt * A)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.0, 1e-8, 1e-3, None]))
def test_constant_eigenpair(seed, gamma):
    _, _, _, (Psi_X, Psi_P, _) = _ou_ensemble(300, seed)
    gp = gram(Psi_X, Psi_P, gamma=gamma, delta_t=0.1)
    K = sdmd_operator(gp).matrix
    e = np.zeros(gp.size)
    e[0] = 1.0
    assert np.max(np.abs(K @ e - e)) <= 1e-12
    res = spectrum(gp)
    assert abs(res.semigroup_eigs[0] - 1.0) <= 1e-12


def test_linearized_spectrum_consistency():
    import scipy.linalg as sla

    _, _, _, (Psi_X, Psi_P, _) = _ou_ensemble(1000, 3)
    gp = gram(Psi_X, Psi_P, delta_t=0.1)
    mu = np.linalg.eigvals(sdmd_operator(gp).matrix)
    lam = sla.eigvals(gp.H_hat, gp.regularized())
    expect = 1 + 0.1 * lam
    m = match_modes(mu, expect)
    assert m.errors.max() <= 1e-10


def test_spectrum_ordering_and_normalization():
    _, _, _, (Psi_X, Psi_P, _) = _ou_ensemble(1000, 4)
    gp = gram(Psi_X, Psi_P, delta_t=0.1)
    res = spectrum(gp)
    mags = np.abs(res.semigroup_eigs)
    assert np.all(np.diff(mags) <= 1e-12)
    for k in range(res.coeff_columns.shape[1]):
        v = res.coeff_columns[:, k]
        assert np.real(v.conj() @ gp.G_hat @ v) == pytest.approx(1.0, abs=1e-10)
        j = np.argmax(np.abs(v))
        assert v[j].imag == 0 and v[j].real > 0


def test_exponential_mode():
    gp = GramPair(np.eye(2), np.diag([0.0, -1.0]), m=1, gamma=0.0, delta_t=0.1)
    res = spectrum(gp, mode="exponential")
    np.testing.assert_allclose(res.generator_eigs, [0.0, np.log(0.9) / 0.1], atol=1e-14)
    with pytest.raises(InvalidArgumentError):
        spectrum(gp, mode="cubic")


def test_edmd_spectrum_generalized():
    ou, ens, d, (Psi_X, _, Psi_Y) = _ou_ensemble(3000, 5, degree=3)
    kop = edmd_operator(Psi_X, Psi_Y, delta_t=0.1)
    res = operator_spectrum(kop)
    direct = np.linalg.eigvals(kop.matrix)
    assert match_modes(res.semigroup_eigs, direct).errors.max() < 1e-9


def test_convert_examples():
    assert convert_eigs([0.0], 0.3, "generator->semigroup")[0] == 1.0
    assert convert_eigs([-1.0], 0.1, "generator->semigroup")[0].real == pytest.approx(0.904837418, abs=1e-9)
    with pytest.raises(DomainError):
        convert_eigs([0.0], 0.1, "semigroup->generator")
    with pytest.raises(InvalidArgumentError):
        convert_eigs([1.0], 0.1, "sideways")


def test_convert_roundtrip_1000():
    rng = np.random.default_rng(11)
    dt = 0.1
    lam = rng.uniform(-20, 5, 1000) + 1j * rng.uniform(-0.99, 0.99, 1000) * np.pi / dt
    back = convert_eigs(convert_eigs(lam, dt, "generator->semigroup"), dt, "semigroup->generator")
    assert np.max(np.abs(back - lam) / np.maximum(1.0, np.abs(lam))) <= 1e-14


def test_match_modes_examples():
    m = match_modes([-1.02, 0.001], [0.0, -1.0])
    pairs = {complex(r): complex(e) for r, e in zip(m.reference, m.estimate)}
    assert pairs[0j] == 0.001 and pairs[-1 + 0j] == -1.02
    same = match_modes([0, -1, -2], [0, -1, -2])
    assert np.all(same.errors == 0)
    extra = match_modes([0.0, -1.0, -7.0, -9.0], [0.0, -1.0])
    np.testing.assert_array_equal(extra.surplus, [2, 3])


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_match_modes_permutation_invariant(vals):
    vals = np.array(vals)
    perm = np.random.default_rng(len(vals)).permutation(len(vals))
    m = match_modes(vals[perm], vals)
    assert np.all(m.errors == 0)
    assert m.surplus.size == 0


def _oracle_grams(degree, sigma=0.1, half=2):
    x = sp.symbols("x", real=True)
    psi = [x**j for j in range(degree + 1)]
    Apsi = [-x * sp.diff(p, x) + sp.Rational(1, 2) * sp.Float(sigma) ** 2 * sp.diff(p, x, 2) for p in psi]
    w = sp.Rational(1, 2 * half)
    G = [[float(sp.integrate(w * a * b, (x, -half, half))) for b in psi] for a in psi]
    H = [[float(sp.integrate(w * a * b, (x, -half, half))) for b in Apsi] for a in psi]
    return np.array(G), np.array(H)


def test_quadrature_oracle_matches_sample_grams():
    ou = OrnsteinUhlenbeck()
    d = MonomialDictionary(1, 5)
    m = 100_000
    X = sample_initial_states(SamplerSpec("uniform-random", [[-2.0, 2.0]], m), seed=17)
    Psi_X, Psi_P, _ = assemble_data_matrices(d, (X, None), ou, need=("x", "prime"))
    gp = gram(Psi_X, Psi_P, delta_t=0.1)
    G, H = _oracle_grams(5)
    seG = np.sqrt(np.einsum("mi,mj->ij", Psi_X**2, Psi_X**2) / m - gp.G_hat**2) / np.sqrt(m)
    seH = np.sqrt(np.einsum("mi,mj->ij", Psi_X**2, Psi_P**2) / m - gp.H_hat**2) / np.sqrt(m)
    assert np.all(np.abs(gp.G_hat - G) <= 4 * seG + 1e-15)
    assert np.all(np.abs(gp.H_hat - H) <= 4 * seH + 1e-15)
    lam = spectrum(gp).generator_eigs
    assert match_modes(lam, -np.arange(6)).errors.max() <= 0.05
    # the oracle Grams themselves give the exact ladder
    exact = spectrum(GramPair(G, H, m=1, gamma=0.0)).generator_eigs
    assert match_modes(exact, -np.arange(6)).errors.max() <= 1e-8


def test_sdmd_gedmd_identity_at_small_scale(hand_data):
    Psi_X, Psi_P = _hand(hand_data)
    for gamma in (0.0, 0.1):
        gp = gram(Psi_X, Psi_P, gamma=gamma, delta_t=0.1)
        G = Psi_X.T @ Psi_X / 3 + gamma * np.eye(2)
        H = Psi_X.T @ Psi_P / 3
        brute = np.eye(2) + 0.1 * np.linalg.inv(G) @ H
        np.testing.assert_allclose(sdmd_operator(gp).matrix, brute, atol=1e-12)


def test_gram_independent_of_workers():
    _, _, _, (Psi_X, Psi_P, _) = _ou_ensemble(5000, 9)
    a = gram(Psi_X, Psi_P, block=512, workers=1)
    b = gram(Psi_X, Psi_P, block=512, workers=3)
    np.testing.assert_array_equal(a.G_hat, b.G_hat)
    np.testing.assert_array_equal(a.H_hat, b.H_hat)


def test_exports(tmp_path, hand_data):
    Psi_X, Psi_P = _hand(hand_data)
    gp = gram(Psi_X, Psi_P, gamma=0.0, delta_t=0.1)
    eig_path, coef_path = export_spectrum(spectrum(gp), tmp_path)
    rows = eig_path.read_text().splitlines()
    assert rows[0] == "index,re_mu,im_mu,re_lambda,im_lambda"
    assert float(rows[2].split(",")[3]) == pytest.approx(-1.0, abs=1e-12)
    paths = export_gram(gp, tmp_path)
    G = np.loadtxt(paths[0], delimiter=",")
    np.testing.assert_array_equal(G, gp.G_hat)
