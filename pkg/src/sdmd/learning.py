"""Trainable tanh dictionaries and the alternating SDMD-DL / EDMD-DL / gEDMD-DL fit.

The network maps ``x -> (psi_1(x), ..., psi_L(x))`` through one or two
tanh layers and a linear head.  The full dictionary appends a constant
and the identity observables: ``[psi_1..psi_L, 1, x_1..x_d]``.

Alongside the values, the forward pass propagates the input Jacobian and
the generator action ``A h`` of every hidden unit.  For a layer
``z = W h + c`` and ``t = tanh(z)``::

    A z = W (A h)
    A t = tanh'(z) A z + 1/2 tanh''(z) grad(z)^T a grad(z)

so ``Psi'_X`` needs no numerical differentiation.  Gradients with respect
to the weights are written out by hand (reverse mode through the same
recursion).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import KoopmanApproximation, gram, operator_spectrum, sdmd_operator
from .dictionary import Dictionary
from .errors import (
    DivergenceError,
    InvalidArgumentError,
    NumericalOverflowError,
    SingularGramError,
    UndefinedCorrelationError,
)
from .simulate import rng_for

__all__ = [
    "TanhNetwork",
    "NetworkDictionary",
    "TrainConfig",
    "TrainTrace",
    "METHODS",
    "network_eval",
    "network_input_jacobian",
    "network_input_hessian",
    "loss_eval",
    "loss_gradient",
    "update_operator",
    "train",
    "mode_similarity",
    "standardize",
    "eigenfunction_series",
    "select_epoch",
    "export_trace",
]

METHODS = ("sdmd-dl", "edmd-dl", "gedmd-dl")


def _apply_cov(a, JT):
    """``out[m, e, j] = sum_d a[m, d, e] JT[m, d, j]`` with an explicit loop over the small ``d``."""
    d = JT.shape[1]
    out = np.empty_like(JT)
    for e in range(d):
        acc = a[:, 0, e, None] * JT[:, 0, :]
        for k in range(1, d):
            acc = acc + a[:, k, e, None] * JT[:, k, :]
        out[:, e, :] = acc
    return out


class TanhNetwork:
    """Fully connected tanh network with a linear output layer.

    Parameters are stored as ``weights[l]`` of shape ``(n_out, n_in)`` and
    ``biases[l]``; the last entry is the linear head.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or len(weights) < 2:
            raise InvalidArgumentError("need at least one hidden layer plus the output layer")
        if len(weights) - 1 > 2:
            raise InvalidArgumentError("at most two hidden layers are supported")
        self.weights = [np.array(W, dtype=float) for W in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InvalidArgumentError("inconsistent layer shapes")
        for W0, W1 in zip(self.weights[:-1], self.weights[1:]):
            if W1.shape[1] != W0.shape[0]:
                raise InvalidArgumentError("layer widths do not chain")

    @classmethod
    def xavier(cls, dim, hidden, n_out, seed):
        """Xavier-uniform weights, zero biases."""
        rng = rng_for(seed)
        sizes = [dim, *hidden, n_out]
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(Ws, bs)

    @property
    def dim(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]

    @property
    def hidden(self):
        return [W.shape[0] for W in self.weights[:-1]]

    def copy(self):
        return TanhNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flat(self):
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, theta):
        k = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = theta[k : k + W.size].reshape(W.shape)
            k += W.size
            b[...] = theta[k : k + b.size]
            k += b.size

    # -- forward passes ------------------------------------------------------
    def values(self, X, cache=False):
        h = X
        caches = []
        for W, c in zip(self.weights[:-1], self.biases[:-1]):
            t = np.tanh(h @ W.T + c)
            caches.append((h, t))
            h = t
        out = h @ self.weights[-1].T + self.biases[-1]
        return (out, caches, h) if cache else out

    def forward_generator(self, X, b, a, cache=False):
        """Values, input Jacobian ``(m, L, d)`` and generator action ``(m, L)``.

        Jacobians are carried transposed, ``(m, d, width)``, so every layer
        is a single matrix product.
        """
        m, d = X.shape
        h, JT, G = X, np.broadcast_to(np.eye(d), (m, d, d)), b
        caches = []
        for W, c in zip(self.weights[:-1], self.biases[:-1]):
            n = W.shape[0]
            z = h @ W.T + c
            JzT = (JT.reshape(m * d, -1) @ W.T).reshape(m, d, n)
            Gz = G @ W.T
            t = np.tanh(z)
            s = 1.0 - t * t
            s2 = -2.0 * t * s
            aJT = _apply_cov(a, JzT)
            Qz = np.sum(aJT * JzT, axis=1)
            if cache:
                caches.append((h, JT, G, JzT, Gz, aJT, Qz, t, s, s2))
            h, JT, G = t, s[:, None, :] * JzT, s * Gz + 0.5 * s2 * Qz
        Wo, co = self.weights[-1], self.biases[-1]
        V = h @ Wo.T + co
        JV = (JT.reshape(m * d, -1) @ Wo.T).reshape(m, d, -1).transpose(0, 2, 1)
        GV = G @ Wo.T
        if cache:
            return V, JV, GV, (caches, h, G)
        return V, JV, GV

    def forward_hessian(self, X):
        """Values, Jacobian and input Hessian ``(m, L, d, d)``."""
        m, d = X.shape
        h = X
        J = np.broadcast_to(np.eye(d), (m, d, d))
        H = np.zeros((m, d, d, d))
        for W, c in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ W.T + c
            Jz = np.einsum("ji,mid->mjd", W, J)
            Hz = np.einsum("ji,mide->mjde", W, H)
            t = np.tanh(z)
            s = 1.0 - t * t
            s2 = -2.0 * t * s
            H = s2[:, :, None, None] * np.einsum("mjd,mje->mjde", Jz, Jz) + s[:, :, None, None] * Hz
            J = s[:, :, None] * Jz
            h = t
        Wo, co = self.weights[-1], self.biases[-1]
        return (
            h @ Wo.T + co,
            np.einsum("ji,mid->mjd", Wo, J),
            np.einsum("ji,mide->mjde", Wo, H),
        )

    # -- reverse passes --------------------------------------------------------
    def backward_values(self, Vbar, caches, h_last):
        """Parameter gradients for a cotangent on the outputs of :meth:`values`."""
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        gW[-1] = Vbar.T @ h_last
        gb[-1] = Vbar.sum(axis=0)
        hbar = Vbar @ self.weights[-1]
        for l in range(len(caches) - 1, -1, -1):
            h, t = caches[l]
            zbar = hbar * (1.0 - t * t)
            gW[l] = zbar.T @ h
            gb[l] = zbar.sum(axis=0)
            if l:
                hbar = zbar @ self.weights[l]
        return gW, gb

    def backward_generator(self, Vbar, Gbar, cache):
        """Parameter gradients for cotangents on the values and generator actions of
        :meth:`forward_generator` (the output Jacobian is not part of any loss)."""
        caches, h_last, G_last = cache
        Wo = self.weights[-1]
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        gW[-1] = Vbar.T @ h_last + Gbar.T @ G_last
        gb[-1] = Vbar.sum(axis=0)
        hbar = Vbar @ Wo
        Gb = Gbar @ Wo
        JbT = None
        for l in range(len(caches) - 1, -1, -1):
            h, JT, G, JzT, Gz, aJT, Qz, t, s, s2 = caches[l]
            W = self.weights[l]
            m, d, n = JzT.shape
            Gzbar = Gb * s
            sbar = Gb * Gz
            s2bar = 0.5 * Gb * Qz
            Qbar = 0.5 * Gb * s2
            JzbarT = 2.0 * Qbar[:, None, :] * aJT
            if JbT is not None:
                JzbarT = JzbarT + s[:, None, :] * JbT
                sbar = sbar + np.sum(JbT * JzT, axis=1)
            tbar = hbar - 2.0 * t * sbar + s2bar * (-2.0 + 6.0 * t * t)
            zbar = tbar * s
            Jz2 = JzbarT.reshape(m * d, n)
            gW[l] = zbar.T @ h + Jz2.T @ JT.reshape(m * d, -1) + Gzbar.T @ G
            gb[l] = zbar.sum(axis=0)
            if l:
                hbar = zbar @ W
                JbT = (Jz2 @ W).reshape(m, d, -1)
                Gb = Gzbar @ W
        return gW, gb

    def to_dict(self):
        return {"weights": [W.tolist() for W in self.weights], "biases": [b.tolist() for b in self.biases]}


class NetworkDictionary(Dictionary):
    """Learned functions followed by the constant and the identity observables."""

    family = "network"

    def __init__(self, network: TanhNetwork):
        self.network = network
        self.dim = network.dim
        self.n_learned = network.n_out
        self.size = self.n_learned + self.dim + 1

    @property
    def constant_index(self):
        return self.n_learned

    def _augment_values(self, V, X):
        return np.concatenate([V, np.ones((X.shape[0], 1)), X], axis=1)

    def _augment_jac(self, JV, m):
        d = self.dim
        extra = np.zeros((m, d + 1, d))
        extra[:, 1:, :] = np.eye(d)
        return np.concatenate([JV, extra], axis=1)

    def _values(self, X):
        return self._augment_values(self.network.values(X), X)

    def _jacobian(self, X):
        _, JV, _ = self.network.forward_generator(X, np.zeros_like(X), np.zeros((X.shape[0], self.dim, self.dim)))
        return self._augment_jac(JV, X.shape[0])

    def _hessian(self, X):
        _, _, HV = self.network.forward_hessian(X)
        m, d = X.shape
        return np.concatenate([HV, np.zeros((m, d + 1, d, d))], axis=1)

    def _apply_generator(self, X, b, a):
        if a is None:
            a = np.zeros((X.shape[0], self.dim, self.dim))
        _, _, GV = self.network.forward_generator(X, b, a)
        return np.concatenate([GV, np.zeros((X.shape[0], 1)), b], axis=1)

    def copy(self):
        return NetworkDictionary(self.network.copy())

    def to_spec(self):
        return {
            "family": "network",
            "dim": self.dim,
            "hidden": self.network.hidden,
            "n_learned": self.n_learned,
            "activation": "tanh",
            "augmentation": ["constant"] + [f"x{i}" for i in range(self.dim)],
            "params": self.network.to_dict(),
        }

    @classmethod
    def from_spec(cls, spec):
        if spec.get("family") != "network":
            raise InvalidArgumentError("not a network dictionary specification")
        p = spec["params"]
        return cls(TanhNetwork(p["weights"], p["biases"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_spec()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_spec(json.loads(Path(path).read_text()))


def network_eval(dictionary: NetworkDictionary, x):
    return dictionary.evaluate(x)


def network_input_jacobian(dictionary: NetworkDictionary, x):
    return dictionary.jacobian(x)


def network_input_hessian(dictionary: NetworkDictionary, x):
    return dictionary.hessian(x)


@dataclass
class TrainConfig:
    """Alternating-fit settings.

    ``outer_epochs`` operator updates, each preceded by ``inner`` gradient
    steps on the weights.  ``batch_size=0`` means full batch.
    """

    method: str = "sdmd-dl"
    learning_rate: float = 1e-3
    gamma: float = 1e-6
    outer_epochs: int = 100
    inner: int = 1
    batch_size: int = 0
    seed: int = 0
    hidden: tuple = (32,)
    n_learned: int = 10
    momentum: bool = False
    record_snapshots: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}")
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning rate must be non-negative")
        if not self.gamma >= 0:
            raise InvalidArgumentError("gamma must be non-negative")
        if self.outer_epochs < 1 or self.inner < 1 or self.batch_size < 0 or self.n_learned < 1:
            raise InvalidArgumentError("epoch, step and size counts must be positive")
        if not 1 <= len(self.hidden) <= 2 or min(self.hidden) < 1:
            raise InvalidArgumentError("one or two hidden layers of positive width")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainTrace:
    """Per-epoch losses, optional (weights, operator) snapshots and the epoch choice."""

    losses: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    selected_epoch: Optional[int] = None
    selection_score: Optional[float] = None

    @property
    def epochs(self):
        return len(self.losses)


def _target_kind(method):
    return "prime" if method == "gedmd-dl" else "y"


def loss_eval(Psi_X, K, target, gamma=0.0):
    """``||target - Psi_X K||_F^2 + gamma ||K||_F^2``.

    ``target`` is ``Psi_Y`` (SDMD-DL, EDMD-DL) or ``Psi_prime_X`` (gEDMD-DL).
    """
    Psi_X, K, target = np.asarray(Psi_X), np.asarray(K), np.asarray(target)
    if Psi_X.shape != target.shape or K.shape != (Psi_X.shape[1], Psi_X.shape[1]):
        raise InvalidArgumentError(f"shapes Psi_X {Psi_X.shape}, K {K.shape}, target {target.shape} disagree")
    R = target - Psi_X @ K
    return float(np.sum(np.abs(R) ** 2) + gamma * np.sum(np.abs(K) ** 2))


def _coefficients(model, X):
    b = np.asarray(model.drift(X), dtype=float).reshape(X.shape)
    a = np.asarray(model.cov(X), dtype=float).reshape(X.shape[0], X.shape[1], X.shape[1])
    return b, a


def loss_gradient(dictionary: NetworkDictionary, K, X, Y=None, coeffs=None, method="sdmd-dl", gamma=0.0):
    """Loss value and weight gradients with ``K`` held fixed.

    ``coeffs`` is the ``(b, a)`` pair at ``X`` (needed for gEDMD-DL only).
    Returns ``(loss, grad_weights, grad_biases)``.
    """
    net = dictionary.network
    L = dictionary.n_learned
    if method == "gedmd-dl":
        b, a = coeffs
        V, _, GV, cache = net.forward_generator(X, b, a, cache=True)
        Psi_X = dictionary._augment_values(V, X)
        T = np.concatenate([GV, np.zeros((X.shape[0], 1)), b], axis=1)
    else:
        shared = _shared_series(X, Y)
        if shared:
            Vs, cs, hs = net.values(np.concatenate([X, Y[-1:]]), cache=True)
            V, Vy = Vs[:-1], Vs[1:]
        else:
            V, cx, hx = net.values(X, cache=True)
            Vy, cy, hy = net.values(Y, cache=True)
        Psi_X = dictionary._augment_values(V, X)
        T = dictionary._augment_values(Vy, Y)
    R = T - Psi_X @ K
    loss = float(np.sum(R * R) + gamma * np.sum(K * K))
    dPsi_X = -2.0 * R @ K.T
    dT = 2.0 * R
    if method == "gedmd-dl":
        gW, gb = net.backward_generator(dPsi_X[:, :L], dT[:, :L], cache)
    elif shared:
        Sbar = np.zeros((X.shape[0] + 1, L))
        Sbar[:-1] += dPsi_X[:, :L]
        Sbar[1:] += dT[:, :L]
        gW, gb = net.backward_values(Sbar, cs, hs)
    else:
        gW, gb = net.backward_values(dPsi_X[:, :L], cx, hx)
        gW2, gb2 = net.backward_values(dT[:, :L], cy, hy)
        gW = [u + v for u, v in zip(gW, gW2)]
        gb = [u + v for u, v in zip(gb, gb2)]
    return loss, gW, gb


def update_operator(dictionary: NetworkDictionary, X, Y, coeffs, method, gamma, delta_t) -> KoopmanApproximation:
    """Closed-form operator for the current weights.

    The Tikhonov weight ``gamma`` belongs to the unnormalised normal
    equations ``(Psi^* Psi + gamma I)``; with the ``1/m``-scaled Gram pair
    this is a shift of ``gamma / m``.
    """
    return _update(dictionary, X, Y, coeffs, method, gamma, delta_t)[0]


def _update(dictionary, X, Y, coeffs, method, gamma, delta_t):
    """Operator plus the ``(Psi_X, loss target)`` pair it was built from."""
    m = X.shape[0]
    net = dictionary.network
    if method == "edmd-dl":
        Psi_X, T = _pair_values(dictionary, X, Y)
        _check_finite(Psi_X, T)
        gp = gram(Psi_X, T, gamma=gamma / m, delta_t=delta_t)
        kop = KoopmanApproximation(gp.solve(gp.H_hat), "edmd-semigroup", delta_t, gp.gamma, gp)
        target = T
    else:
        b, a = coeffs
        V, _, GV = net.forward_generator(X, b, a)
        Psi_X = dictionary._augment_values(V, X)
        P = np.concatenate([GV, np.zeros((m, 1)), b], axis=1)
        _check_finite(Psi_X, P)
        gp = gram(Psi_X, P, gamma=gamma / m, delta_t=delta_t)
        if method == "sdmd-dl":
            kop = sdmd_operator(gp)
            if _shared_series(X, Y):
                target = dictionary._augment_values(np.concatenate([V[1:], net.values(Y[-1:])]), Y)
            else:
                target = dictionary._values(Y)
        else:
            kop = KoopmanApproximation(gp.solve(gp.H_hat), "gedmd-generator", delta_t, gp.gamma, gp)
            target = P
    kop = KoopmanApproximation(kop.matrix, kop.kind, kop.delta_t, kop.gamma, kop.gram, dictionary)
    return kop, Psi_X, target


def _shared_series(X, Y):
    """True when ``Y`` is ``X`` advanced by one row, as for pairs cut from one trajectory."""
    return Y is not None and X.shape == Y.shape and X.shape[0] > 1 and np.array_equal(X[1:], Y[:-1])


def _pair_values(dictionary, X, Y):
    """Dictionary values at ``X`` and ``Y``, evaluating a shared series only once."""
    if _shared_series(X, Y):
        S = dictionary._values(np.concatenate([X, Y[-1:]]))
        return S[:-1], S[1:]
    return dictionary._values(X), dictionary._values(Y)


def _check_finite(*mats):
    if not all(np.all(np.isfinite(M)) for M in mats):
        raise DivergenceError("dictionary values became non-finite")


def train(data, model, config: TrainConfig, network: TanhNetwork | None = None):
    """Alternating dictionary learning.

    Each outer epoch takes ``config.inner`` gradient steps on the loss with
    the operator frozen, then recomputes the operator with the method's
    closed form.  ``model`` supplies drift and diffusion (analytic or a
    :class:`~sdmd.coef.CoefficientEstimate`); it may be ``None`` for
    EDMD-DL.

    Returns
    -------
    dictionary : NetworkDictionary
    operator : KoopmanApproximation
    trace : TrainTrace
        One loss per outer epoch, evaluated after the operator update.
    """
    X = np.asarray(data.x_points, dtype=float)
    Y = np.asarray(data.y_points, dtype=float)
    dt = float(data.delta_t)
    method = config.method
    if method != "edmd-dl" and model is None:
        raise InvalidArgumentError(f"{method} needs drift and diffusion coefficients")
    if network is None:
        network = TanhNetwork.xavier(X.shape[1], config.hidden, config.n_learned, config.seed)
    dictionary = NetworkDictionary(network.copy())
    coeffs = _coefficients(model, X) if model is not None else None
    kop = update_operator(dictionary, X, Y, coeffs, method, config.gamma, dt)
    trace = TrainTrace()
    m = X.shape[0]
    bs = m if config.batch_size == 0 else min(config.batch_size, m)
    velocity = None
    cursor = 0
    net = dictionary.network
    for epoch in range(config.outer_epochs):
        K = kop.matrix
        for _ in range(config.inner):
            sl = slice(cursor, cursor + bs)
            cursor = 0 if cursor + bs >= m else cursor + bs
            c = None if coeffs is None else (coeffs[0][sl], coeffs[1][sl])
            loss, gW, gb = loss_gradient(dictionary, K, X[sl], Y[sl], c, method, config.gamma)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}", epoch, config.learning_rate)
            grads = [g for pair in zip(gW, gb) for g in pair]
            params = [p for pair in zip(net.weights, net.biases) for p in pair]
            if config.momentum:
                if velocity is None:
                    velocity = [np.zeros_like(p) for p in params]
                for v, g in zip(velocity, grads):
                    v *= 0.9
                    v += g
                grads = velocity
            for p, g in zip(params, grads):
                p -= config.learning_rate * g
            if not all(np.all(np.isfinite(p)) for p in params):
                raise DivergenceError(f"weights became non-finite at epoch {epoch}", epoch, config.learning_rate)
        try:
            kop, Psi_X, T = _update(dictionary, X, Y, coeffs, method, config.gamma, dt)
        except (DivergenceError, NumericalOverflowError) as exc:
            raise DivergenceError(f"{exc} at epoch {epoch}", epoch, config.learning_rate) from exc
        except SingularGramError as exc:
            raise SingularGramError(f"{exc} (outer epoch {epoch}, learning rate {config.learning_rate})") from exc
        loss = loss_eval(Psi_X, kop.matrix, T, config.gamma)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}", epoch, config.learning_rate)
        trace.losses.append(loss)
        if config.record_snapshots:
            frozen = NetworkDictionary(net.copy())
            snap_op = KoopmanApproximation(kop.matrix, kop.kind, kop.delta_t, kop.gamma, kop.gram, frozen)
            trace.snapshots.append({"epoch": epoch, "network": frozen.network, "operator": snap_op})
    return dictionary, kop, trace


def standardize(series):
    s = np.asarray(series, dtype=float)
    sd = s.std()
    if not sd > 0:
        raise UndefinedCorrelationError("series has zero variance")
    return (s - s.mean()) / sd


def mode_similarity(series_a, series_b) -> float:
    """Pearson correlation coefficient of two equally long real series."""
    a = np.asarray(series_a, dtype=float).ravel()
    b = np.asarray(series_b, dtype=float).ravel()
    if a.shape != b.shape or a.size < 2:
        raise InvalidArgumentError("series must have equal length >= 2")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise UndefinedCorrelationError("zero-variance series has no correlation")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def eigenfunction_series(kop: KoopmanApproximation, states, k=1, mode="linearized"):
    """Standardised real part of eigenfunction ``k`` (0-based, ``k=1`` is the second) along ``states``."""
    res = operator_spectrum(kop, mode)
    phi = kop.dictionary.evaluate(states) @ res.coeff_columns[:, k]
    return standardize(np.real(phi))


def select_epoch(trace: TrainTrace, reference, extractor: Callable) -> int:
    """Pick the snapshot whose extracted series is most correlated with ``reference``.

    Scores are ``|Pearson|``; ties go to the earliest epoch.  Fills
    ``trace.scores``, ``trace.selected_epoch`` and ``trace.selection_score``.
    """
    if not trace.snapshots:
        raise InvalidArgumentError("trace has no spectral snapshots; train with record_snapshots=True")
    scores = []
    for snap in trace.snapshots:
        try:
            scores.append(abs(mode_similarity(extractor(snap), reference)))
        except UndefinedCorrelationError:
            scores.append(0.0)
    best = int(np.argmax(scores))  # first maximum
    trace.scores = scores
    trace.selected_epoch = int(trace.snapshots[best]["epoch"])
    trace.selection_score = float(scores[best])
    return trace.selected_epoch


def export_trace(trace: TrainTrace, path):
    """CSV with columns ``epoch, loss, selection_score``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "selection_score"])
    score_of = {}
    if trace.scores:
        score_of = {s["epoch"]: sc for s, sc in zip(trace.snapshots, trace.scores)}
    for e, loss in enumerate(trace.losses):
        sc = score_of.get(e)
        w.writerow([e, "%.17g" % loss, "" if sc is None else "%.17g" % sc])
    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(p)
    return p
