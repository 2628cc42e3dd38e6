import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmd.core import operator_spectrum
from sdmd.errors import DivergenceError, InvalidArgumentError, UndefinedCorrelationError
from sdmd.learning import (
    NetworkDictionary,
    TanhNetwork,
    TrainConfig,
    TrainTrace,
    export_trace,
    loss_eval,
    loss_gradient,
    mode_similarity,
    network_eval,
    network_input_hessian,
    network_input_jacobian,
    select_epoch,
    train,
    update_operator,
)
from sdmd.models import OrnsteinUhlenbeck, TripleWell
from sdmd.simulate import SamplerSpec, SnapshotEnsemble, generate_ensemble


def _coeffs(model, X):
    return model.drift(X).reshape(X.shape), model.cov(X).reshape(X.shape[0], X.shape[1], X.shape[1])


def _random_net(seed, dim=2, hidden=(4, 3), n_out=3):
    rng = np.random.default_rng(seed)
    net = TanhNetwork.xavier(dim, hidden, n_out, seed)
    for b in net.biases:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return net


def test_zero_weights():
    net = TanhNetwork.xavier(2, (5,), 3, 0)
    for W in net.weights:
        W[...] = 0.0
    net.biases[-1][...] = [0.5, -1.0, 2.0]
    d = NetworkDictionary(net)
    x = np.array([0.3, -0.8])
    v = network_eval(d, x)
    np.testing.assert_array_equal(v[:3], [0.5, -1.0, 2.0])
    np.testing.assert_array_equal(network_input_jacobian(d, x)[:3], 0.0)
    np.testing.assert_array_equal(network_input_hessian(d, x)[:3], 0.0)


def test_augmentation_layout():
    d = NetworkDictionary(_random_net(0))
    assert d.size == d.n_learned + d.dim + 1
    x = np.array([0.4, -0.1])
    v = d.evaluate(x)
    assert v[d.constant_index] == 1.0
    np.testing.assert_array_equal(v[-2:], x)
    np.testing.assert_array_equal(d.jacobian(x)[d.constant_index], 0.0)
    np.testing.assert_array_equal(d.hessian(x)[d.constant_index], 0.0)
    np.testing.assert_array_equal(d.jacobian(x)[-2:], np.eye(2))


@pytest.mark.parametrize("seed", range(20))
def test_input_jacobian_matches_differences(seed):
    d = NetworkDictionary(_random_net(seed))
    x = np.random.default_rng(100 + seed).uniform(-1, 1, 2)
    h = 1e-5
    J = d.jacobian(x)
    Hs = d.hessian(x)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (d.evaluate(x + e) - d.evaluate(x - e)) / (2 * h)
        assert np.max(np.abs(J[:, k] - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))
        fd2 = (d.jacobian(x + e) - d.jacobian(x - e)) / (2 * h)
        assert np.max(np.abs(Hs[:, :, k] - fd2)) <= 1e-5 * max(1.0, np.max(np.abs(fd2)))


def test_generator_action_matches_hessian_path():
    tw = TripleWell()
    d = NetworkDictionary(_random_net(3))
    X = np.random.default_rng(4).uniform(-1, 1, (6, 2))
    from sdmd.dictionary import generator_action

    b, a = _coeffs(tw, X)
    want = np.einsum("mi,mni->mn", b, d.jacobian(X)) + 0.5 * np.einsum("mik,mnik->mn", a, d.hessian(X))
    np.testing.assert_allclose(generator_action(d, tw, X), want, rtol=1e-12, atol=1e-12)


def test_loss_examples():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(6, 3))
    K = rng.normal(size=(3, 3))
    assert loss_eval(P, K, P @ K) == pytest.approx(0.0, abs=1e-24)
    Y = rng.normal(size=(6, 3))
    assert loss_eval(P, np.zeros((3, 3)), Y) == pytest.approx(np.sum(Y**2))
    with pytest.raises(InvalidArgumentError):
        loss_eval(P, K, Y[:, :2])


@pytest.mark.parametrize("method", ["sdmd-dl", "edmd-dl", "gedmd-dl"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_gradient_matches_differences(method, seed):
    tw = TripleWell()
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (5, 2))
    Y = X + 0.1 * rng.normal(size=X.shape)
    coeffs = _coeffs(tw, X)
    d = NetworkDictionary(_random_net(seed))
    K = rng.normal(scale=0.5, size=(d.size, d.size))
    gamma = 1e-3
    _, gW, gb = loss_gradient(d, K, X, Y, coeffs, method, gamma)
    grad = np.concatenate([g.ravel() for pair in zip(gW, gb) for g in pair])
    theta = d.network.flat()
    h = 1e-6
    fd = np.empty_like(theta)
    for i in range(theta.size):
        for sgn in (1, -1):
            t = theta.copy()
            t[i] += sgn * h
            d.network.set_flat(t)
            val = loss_gradient(d, K, X, Y, coeffs, method, gamma)[0]
            fd[i] = val if sgn == 1 else (fd[i] - val) / (2 * h)
    d.network.set_flat(theta)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


@pytest.mark.parametrize("method", ["sdmd-dl", "edmd-dl"])
def test_single_series_matches_generic_path(method):
    # consecutive pairs of one trajectory take the shared-series path; a row
    # permutation breaks the shift structure without changing the loss
    tw = TripleWell()
    rng = np.random.default_rng(4)
    S = np.cumsum(0.05 * rng.normal(size=(41, 2)), axis=0)
    X, Y = S[:-1], S[1:]
    perm = rng.permutation(40)
    d = NetworkDictionary(_random_net(4))
    K = rng.normal(scale=0.5, size=(d.size, d.size))
    a = loss_gradient(d, K, X, Y, method=method, gamma=1e-3)
    b = loss_gradient(d, K, X[perm], Y[perm], method=method, gamma=1e-3)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    for u, v in zip(a[1] + a[2], b[1] + b[2]):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    ka = update_operator(d, X, Y, _coeffs(tw, X), method, 1e-3, 0.01).matrix
    kb = update_operator(d, X[perm], Y[perm], _coeffs(tw, X[perm]), method, 1e-3, 0.01).matrix
    np.testing.assert_allclose(ka, kb, rtol=1e-8, atol=1e-10)


def _ou_data(m=200, seed=0):
    ou = OrnsteinUhlenbeck()
    ens = generate_ensemble(ou, SamplerSpec("uniform-random", [[-2.0, 2.0]], m), 0.1, 10, seed=seed)
    return ou, ens


def test_zero_learning_rate_is_single_update():
    ou, ens = _ou_data()
    cfg = TrainConfig(method="sdmd-dl", learning_rate=0.0, gamma=1e-4, outer_epochs=3, hidden=(6,), n_learned=3, seed=5)
    net0 = TanhNetwork.xavier(1, (6,), 3, 5)
    d, kop, trace = train(ens, ou, cfg)
    np.testing.assert_array_equal(d.network.flat(), net0.flat())
    direct = update_operator(NetworkDictionary(net0), ens.x_points, ens.y_points, _coeffs(ou, ens.x_points),
                             "sdmd-dl", 1e-4, 0.1)
    np.testing.assert_array_equal(kop.matrix, direct.matrix)
    assert trace.epochs == 3


def test_sdmd_dl_equals_identity_plus_generator():
    ou, ens = _ou_data()
    net = TanhNetwork.xavier(1, (6,), 3, 2)
    d = NetworkDictionary(net)
    c = _coeffs(ou, ens.x_points)
    K = update_operator(d, ens.x_points, ens.y_points, c, "sdmd-dl", 1e-3, 0.1).matrix
    A = update_operator(d, ens.x_points, ens.y_points, c, "gedmd-dl", 1e-3, 0.1).matrix
    assert np.max(np.abs(K - np.eye(d.size) - 0.1 * A)) <= 1e-12


def test_constant_eigenpair_every_epoch():
    ou, ens = _ou_data(300, 1)
    cfg = TrainConfig(method="sdmd-dl", learning_rate=1e-4, gamma=1e-3, outer_epochs=8, hidden=(6,), n_learned=3,
                      seed=0, record_snapshots=True)
    d, kop, trace = train(ens, ou, cfg)
    for snap in trace.snapshots:
        K = snap["operator"].matrix
        e = np.zeros(K.shape[0])
        e[snap["operator"].dictionary.constant_index] = 1.0
        assert np.max(np.abs(K @ e - e)) <= 1e-10


def test_training_deterministic():
    ou, ens = _ou_data(150, 2)
    cfg = TrainConfig(method="sdmd-dl", learning_rate=1e-4, gamma=1e-3, outer_epochs=5, hidden=(4, 4), n_learned=2, seed=9)
    a = train(ens, ou, cfg)
    b = train(ens, ou, cfg)
    np.testing.assert_array_equal(a[0].network.flat(), b[0].network.flat())
    assert a[2].losses == b[2].losses


def test_edmd_dl_toy_reaches_small_loss():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (20, 2))
    Y = X @ np.array([[0.9, 0.1], [0.0, 0.8]]).T
    ens = SnapshotEnsemble(X, Y, 0.1, 0.1, 0)
    cfg = TrainConfig(method="edmd-dl", learning_rate=3.0, gamma=1e-10, outer_epochs=200, hidden=(8,), n_learned=1,
                      seed=1, momentum=True)
    _, _, trace = train(ens, None, cfg)
    assert trace.epochs == 200
    assert trace.losses[0] > 1e-5
    assert min(trace.losses) <= 1e-6


def test_divergence_reports_epoch():
    ou, ens = _ou_data(100, 3)
    cfg = TrainConfig(method="sdmd-dl", learning_rate=1e6, gamma=1e-3, outer_epochs=50, hidden=(4,), n_learned=2, seed=0)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train(ens, ou, cfg)
    assert "epoch" in str(info.value)
    assert info.value.learning_rate == 1e6


def test_methods_need_coefficients():
    _, ens = _ou_data(50)
    with pytest.raises(InvalidArgumentError):
        train(ens, None, TrainConfig(method="sdmd-dl", outer_epochs=1))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(method="dmd")
    with pytest.raises(InvalidArgumentError):
        TrainConfig(hidden=(4, 4, 4))
    with pytest.raises(InvalidArgumentError):
        TrainConfig(outer_epochs=0)


def test_similarity_examples():
    s = np.sin(np.linspace(0, 7, 100))
    assert mode_similarity(s, s) == pytest.approx(1.0)
    assert mode_similarity(s, -s) == pytest.approx(-1.0)
    t = np.arange(1000) * 2 * np.pi / 1000
    assert abs(mode_similarity(np.sin(t), np.sin(2 * t))) <= 1e-10
    with pytest.raises(UndefinedCorrelationError):
        mode_similarity(np.ones(5), s[:5])


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.floats(0.1, 10), st.floats(-5, 5))
def test_similarity_affine_invariant(vals, scale, shift):
    a = np.array(vals)
    if a.std() < 1e-6:
        return
    b = np.sin(np.arange(a.size))
    assert mode_similarity(a * scale + shift, b) == pytest.approx(mode_similarity(a, b), abs=1e-9)


def _trace_with_scores(values):
    trace = TrainTrace(losses=[0.0] * len(values))
    trace.snapshots = [{"epoch": e, "score": v} for e, v in enumerate(values)]
    return trace


def _planted_extractor(reference):
    noise = np.cos(np.arange(reference.size) * 1.7)

    def extract(snap):
        w = snap["score"]
        return w * reference + (1 - w) * noise
    return extract


def test_select_epoch_examples():
    ref = np.sin(np.arange(50) * 0.3)
    ext = _planted_extractor(ref)
    assert select_epoch(_trace_with_scores([0.5]), ref, ext) == 0
    assert select_epoch(_trace_with_scores(np.linspace(0.1, 0.9, 10)), ref, ext) == 9
    vals = [0.1, 0.2, 0.3, 0.2, 0.4, 0.5, 0.6, 0.95, 0.6, 0.7]
    trace = _trace_with_scores(vals)
    assert select_epoch(trace, ref, ext) == 7
    assert trace.selection_score == max(trace.scores)
    tie = _trace_with_scores([0.3, 0.9, 0.9])
    assert select_epoch(tie, ref, ext) == 1
    with pytest.raises(InvalidArgumentError):
        select_epoch(TrainTrace(losses=[1.0]), ref, ext)


def test_dictionary_and_trace_export(tmp_path):
    ou, ens = _ou_data(100, 4)
    cfg = TrainConfig(method="sdmd-dl", learning_rate=1e-4, gamma=1e-3, outer_epochs=3, hidden=(4,), n_learned=2, seed=1)
    d, kop, trace = train(ens, ou, cfg)
    d.save(tmp_path / "d.json")
    back = NetworkDictionary.load(tmp_path / "d.json")
    x = np.linspace(-1, 1, 5)[:, None]
    np.testing.assert_array_equal(back.evaluate(x), d.evaluate(x))
    export_trace(trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,selection_score" and len(lines) == 4
    assert np.isfinite(operator_spectrum(kop).generator_eigs).all()
