import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmd.dictionary import (
    FourierDictionary,
    GaussianRBFDictionary,
    HermiteDictionary,
    MonomialDictionary,
    TransformedDictionary,
    dict_eval,
    dict_hessian,
    dict_jacobian,
    generator_action,
    generator_action_deterministic,
    generator_action_second,
    make_dictionary,
)
from sdmd.errors import InvalidArgumentError, UnsupportedFamilyError
from sdmd.models import OrnsteinUhlenbeck, StuartLandau, TripleWell
from sdmd.simulate import SamplerSpec, generate_ensemble

x_, y_ = sp.symbols("x y", real=True)


def test_monomial_values_and_derivatives():
    d = MonomialDictionary(dim=1, max_degree=2)
    np.testing.assert_array_equal(dict_eval(d, [2.0]), [1, 2, 4])
    np.testing.assert_array_equal(dict_jacobian(d, [3.0])[2], [6.0])
    np.testing.assert_array_equal(dict_hessian(d, [3.0])[2], [[2.0]])


def test_hermite_value():
    d = HermiteDictionary(dim=1, max_order=2, center=0.0, scale=1.0)
    assert dict_eval(d, [1.0])[2] == 2.0


@pytest.mark.parametrize("n", range(7))
def test_hermite_matches_sympy(n):
    d = HermiteDictionary(dim=1, max_order=6, center=0.3, scale=0.7)
    u = (x_ - sp.Rational(3, 10)) / sp.Rational(7, 10)
    expr = sp.hermite(n, u)
    for xv in (-1.1, 0.2, 0.9):
        vals = d.evaluate([xv])
        jac = d.jacobian([xv])
        hes = d.hessian([xv])
        assert vals[n] == pytest.approx(float(expr.subs(x_, xv)), rel=1e-12, abs=1e-12)
        assert jac[n, 0] == pytest.approx(float(sp.diff(expr, x_).subs(x_, xv)), rel=1e-12, abs=1e-12)
        assert hes[n, 0, 0] == pytest.approx(float(sp.diff(expr, x_, 2).subs(x_, xv)), rel=1e-12, abs=1e-12)


def test_fourier_unit_at_origin():
    d = FourierDictionary(radial_modes=0, angular_modes=1, r_range=(0.4, 0.8))
    v = d.evaluate([0.4, 0.0])
    np.testing.assert_allclose(v[[d.mode_index(-1), d.mode_index(1)]], [1, 1])
    with pytest.raises(InvalidArgumentError):
        d.mode_index(5)


def test_rbf_gradient_zero_at_center():
    d = GaussianRBFDictionary([[0.3, -0.2]], 0.5)
    np.testing.assert_array_equal(d.jacobian([0.3, -0.2]), np.zeros((1, 2)))
    with pytest.raises(InvalidArgumentError):
        GaussianRBFDictionary([[0.0]], 0.0)


def test_generator_action_examples(ou):
    d = MonomialDictionary(dim=1, max_degree=2)
    g = generator_action(d, ou, [1.0])
    assert g[0] == 0.0
    assert g[1] == pytest.approx(-1.0, abs=1e-15)
    assert g[2] == pytest.approx(-1.99, abs=1e-14)
    det = generator_action_deterministic(d, ou, [1.0])
    assert det[2] == pytest.approx(-2.0, abs=1e-15)
    g2 = generator_action_second(d, ou, [1.0])
    assert g2[1] == pytest.approx(1.0, abs=1e-15)
    assert g2[0] == 0.0


def _sympy_generator(expr, drift, cov, syms):
    out = sum(b * sp.diff(expr, s) for b, s in zip(drift, syms))
    out += sp.Rational(1, 2) * sum(
        cov[i][k] * sp.diff(expr, syms[i], syms[k]) for i in range(len(syms)) for k in range(len(syms))
    )
    return out


def test_generator_second_order_matches_sympy_on_triple_well():
    tw = TripleWell()
    V = sum(c * sp.exp(-(x_ - a) ** 2 - (y_ - b) ** 2) for c, a, b in
            [(3, 0, sp.Rational(1, 3)), (-3, 0, sp.Rational(5, 3)), (-5, 1, 0), (-5, -1, 0)])
    V += sp.Rational(1, 5) * x_**4 + sp.Rational(1, 5) * (y_ - sp.Rational(1, 3)) ** 4
    drift = [-sp.diff(V, x_), -sp.diff(V, y_)]
    s2 = sp.Float(1.09) ** 2
    cov = [[s2, 0], [0, s2]]
    d = MonomialDictionary(dim=2, max_degree=3)
    pts = np.array([[0.3, -0.4], [-1.2, 0.8]])
    first = generator_action(d, tw, pts)
    second = generator_action_second(d, tw, pts)
    for j, alpha in enumerate(d.exponents):
        psi = x_ ** int(alpha[0]) * y_ ** int(alpha[1])
        A1 = _sympy_generator(psi, drift, cov, (x_, y_))
        A2 = _sympy_generator(A1, drift, cov, (x_, y_))
        for p, pt in enumerate(pts):
            sub = {x_: pt[0], y_: pt[1]}
            assert first[p, j] == pytest.approx(float(A1.subs(sub)), rel=1e-10, abs=1e-10)
            assert second[p, j] == pytest.approx(float(A2.subs(sub)), rel=1e-9, abs=1e-9)


def test_generator_action_polar_fourier_matches_sympy():
    sl = StuartLandau()
    r, th = sp.symbols("r theta", positive=True)
    eps = sp.Rational(1, 20)
    drift = [sp.Rational(1, 4) * r - r**3 + eps**2 / (2 * r), 1 - r**2]
    cov = [[eps**2, 0], [0, eps**2 / r**2]]
    d = FourierDictionary(radial_modes=1, angular_modes=2, r_range=(0.4, 0.8))
    pt = np.array([0.55, 1.3])
    g = generator_action(d, sl, pt)
    for j in range(d.size):
        psi = sp.exp(sp.I * int(d.n[j]) * th) * sp.exp(sp.I * 2 * sp.pi * int(d.k[j]) * (r - sp.Rational(2, 5)) / sp.Rational(2, 5))
        A = _sympy_generator(psi, drift, cov, (r, th))
        want = complex(A.subs({r: pt[0], th: pt[1]}).evalf())
        assert abs(g[j] - want) < 1e-10


def test_constant_has_zero_action():
    d = MonomialDictionary(dim=2, max_degree=2)
    pts = np.array([[0.1, 0.2], [1.0, -0.5]])
    np.testing.assert_array_equal(generator_action(d, TripleWell(), pts)[:, 0], 0.0)
    np.testing.assert_array_equal(generator_action_second(d, TripleWell(), pts)[:, 0], 0.0)


def test_fourier_has_no_fourth_derivatives():
    with pytest.raises(UnsupportedFamilyError):
        generator_action_second(FourierDictionary(1, 1), StuartLandau(), [0.5, 0.0])


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1.5, 1.5))
def test_generator_action_linearity(alpha, beta, x):
    base = MonomialDictionary(dim=1, max_degree=4)
    C = np.zeros((5, 3))
    C[2, 0] = 1.0
    C[4, 1] = 1.0
    C[2, 2], C[4, 2] = alpha, beta
    d = TransformedDictionary(base, C)
    g = generator_action(d, OrnsteinUhlenbeck(), [x])
    assert abs(g[2] - (alpha * g[0] + beta * g[1])) <= 1e-12 * max(1.0, abs(g[2]), abs(alpha * g[0]), abs(beta * g[1]))


@settings(max_examples=20)
@given(st.floats(-2, 2), st.floats(-1, 2))
def test_hessian_symmetric(x, y):
    for d in (MonomialDictionary(2, 3), HermiteDictionary(2, 3, center=0.1, scale=0.8),
              GaussianRBFDictionary([[0.0, 0.0], [1.0, 0.5]], [0.7, 1.2])):
        H = d.hessian([x, y])
        assert np.max(np.abs(H - np.swapaxes(H, 1, 2))) == 0.0


def test_rbf_derivatives_match_differences():
    d = GaussianRBFDictionary([[0.0, 0.0], [1.0, 0.5]], [0.7, 1.2])
    x = np.array([0.3, -0.2])
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        np.testing.assert_allclose(d.jacobian(x)[:, k], (d.evaluate(x + e) - d.evaluate(x - e)) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(d.hessian(x)[:, :, k], (d.jacobian(x + e) - d.jacobian(x - e)) / (2 * h), atol=1e-7)


def test_monte_carlo_consistency():
    ou = OrnsteinUhlenbeck()
    dt = 1e-3
    n = 100_000
    s = SamplerSpec("uniform-random", [[0.0, 1.0]], n)
    ens = generate_ensemble(ou, s, dt, 1, seed=31, initial_states=np.ones((n, 1)))
    samples = (ens.y_points[:, 0] ** 2 - 1.0) / dt
    se = samples.std(ddof=1) / math.sqrt(n)
    want = generator_action(MonomialDictionary(1, 2), ou, [1.0])[2]
    assert abs(samples.mean() - want) <= 4 * se


def test_taylor_residual_orders():
    # E[X_t^2 | x] = m^2 + v with the exact OU moments
    ou = OrnsteinUhlenbeck()
    d = MonomialDictionary(1, 2)
    dts = np.array([1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    first, second = [], []
    A = generator_action(d, ou, [1.0])[2]
    A2 = generator_action_second(d, ou, [1.0])[2]
    for dt in dts:
        m, v = ou.conditional_moments(1.0, dt)
        exact = m**2 + v
        first.append(abs(exact - 1.0 - dt * A))
        second.append(abs(exact - 1.0 - dt * A - 0.5 * dt**2 * A2))
    s1 = np.polyfit(np.log(dts), np.log(first), 1)[0]
    s2 = np.polyfit(np.log(dts), np.log(second), 1)[0]
    assert 1.8 <= s1 <= 2.2
    assert 2.7 <= s2 <= 3.3


def test_make_dictionary_roundtrip():
    for d in (MonomialDictionary(2, 3), HermiteDictionary(1, 4, 0.5, 2.0), FourierDictionary(2, 3),
              GaussianRBFDictionary([[0.0], [1.0]], [0.5, 0.5])):
        again = make_dictionary(d.to_spec())
        pt = np.full(d.dim, 0.6)
        np.testing.assert_array_equal(again.evaluate(pt), d.evaluate(pt))
    with pytest.raises(InvalidArgumentError):
        make_dictionary({"family": "wavelet"})
    with pytest.raises(InvalidArgumentError):
        make_dictionary({"family": "monomial", "degree": 3})
