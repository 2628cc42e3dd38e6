"""Drift and diffusion estimation from snapshot pairs.

A next-state predictor ``y_hat(x)`` is fitted by least squares, then

    b_hat(x)     = (y_hat(x) - x) / dt
    sigma_hat(x) = sqrt(local mean of (y - y_hat)^2 / dt)     (per axis)

The default predictor is piecewise affine on a uniform bin grid.  A small
tanh network predictor is available with ``kind="network"``.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError
from .models import SdeModel, _diag_batch

__all__ = [
    "CoefficientEstimate",
    "BinnedPredictor",
    "NetworkPredictor",
    "ExtrapolationWarning",
    "estimate_drift",
    "estimate_diffusion",
    "estimate_coefficients",
]


class ExtrapolationWarning(UserWarning):
    """Query outside the training hull; the nearest bin was used."""


def _pairs(data):
    if isinstance(data, tuple):
        X, Y, dt = data
    else:
        X, Y, dt = data.x_points, data.y_points, data.delta_t
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape != Y.shape or X.shape[0] == 0:
        raise InvalidArgumentError("need matching, non-empty x and y point sets")
    if not dt > 0:
        raise InvalidArgumentError("delta_t must be positive")
    return X, Y, float(dt)


class BinnedPredictor:
    """Piecewise-affine least-squares predictor on a uniform grid of bins.

    Bins with fewer than ``min_affine`` samples (default ``3 (d + 1)``) fall
    back to a constant fit; empty bins have no predictor and raise
    :class:`InsufficientDataError` when queried.
    """

    kind = "binned"

    def __init__(self, edges, coef, counts):
        self.edges = [np.asarray(e, dtype=float) for e in edges]
        self.coef = np.asarray(coef, dtype=float)  # (n_bins, d + 1, d_out)
        self.counts = np.asarray(counts, dtype=int)
        self.dim = len(self.edges)
        self.shape = tuple(len(e) - 1 for e in self.edges)
        self.last_extrapolated = False

    @classmethod
    def fit(cls, X, Y, bins=50, min_affine=None):
        m, d = X.shape
        bins = np.broadcast_to(np.asarray(bins, dtype=int), (d,))
        if np.any(bins < 1):
            raise InvalidArgumentError("bin count must be positive")
        min_affine = 3 * (d + 1) if min_affine is None else int(min_affine)
        lo, hi = X.min(axis=0), X.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        edges = [np.linspace(lo[i], hi[i], bins[i] + 1) for i in range(d)]
        pred = cls(edges, np.zeros((int(np.prod(bins)), d + 1, Y.shape[1])), np.zeros(int(np.prod(bins)), int))
        idx, _ = pred._bin_index(X)
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        starts = np.searchsorted(sorted_idx, np.arange(pred.coef.shape[0]))
        ends = np.searchsorted(sorted_idx, np.arange(pred.coef.shape[0]), side="right")
        for k in range(pred.coef.shape[0]):
            rows = order[starts[k] : ends[k]]
            n = rows.size
            pred.counts[k] = n
            if n == 0:
                continue
            xb, yb = X[rows], Y[rows]
            center = xb.mean(axis=0)
            if n >= min_affine:
                A = np.hstack([np.ones((n, 1)), xb - center])
                beta, *_ = np.linalg.lstsq(A, yb, rcond=None)
                if np.linalg.matrix_rank(A) < d + 1:
                    beta = np.vstack([yb.mean(axis=0), np.zeros((d, Y.shape[1]))])
            else:
                beta = np.vstack([yb.mean(axis=0), np.zeros((d, Y.shape[1]))])
            # store as intercept at the origin plus slopes
            beta[0] = beta[0] - center @ beta[1:]
            pred.coef[k] = beta
        return pred

    def _bin_index(self, X):
        pos = []
        outside = np.zeros(X.shape[0], dtype=bool)
        for i, e in enumerate(self.edges):
            j = np.searchsorted(e, X[:, i], side="right") - 1
            outside |= (X[:, i] < e[0]) | (X[:, i] > e[-1])
            pos.append(np.clip(j, 0, len(e) - 2))
        return np.ravel_multi_index(pos, self.shape), outside

    def _lookup(self, X):
        idx, outside = self._bin_index(X)
        empty = self.counts[idx] == 0
        if empty.any():
            r = int(np.flatnonzero(empty)[0])
            raise InsufficientDataError(f"no training samples in the bin containing {X[r].tolist()}")
        self.last_extrapolated = bool(outside.any())
        if self.last_extrapolated:
            warnings.warn("query outside the training hull; using the nearest bin", ExtrapolationWarning, stacklevel=3)
        return idx, outside

    def predict(self, X):
        idx, _ = self._lookup(X)
        c = self.coef[idx]
        return c[:, 0] + np.einsum("mi,mio->mo", X, c[:, 1:])

    def slopes(self, X):
        """d y_hat / d x, shape ``(m, d_out, d)``."""
        idx, _ = self._lookup(X)
        return np.transpose(self.coef[idx][:, 1:], (0, 2, 1))

    def bin_of(self, X):
        return self._lookup(X)[0]

    def to_dict(self):
        return {"kind": "binned", "edges": [e.tolist() for e in self.edges], "coef": self.coef.tolist(),
                "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["edges"], d["coef"], d["counts"])


class NetworkPredictor:
    """Single-hidden-layer tanh network ``y_hat = x + net(x)`` trained on mean squared error."""

    kind = "network"

    def __init__(self, network):
        self.network = network
        self.dim = network.dim
        self.last_extrapolated = False

    @classmethod
    def fit(cls, X, Y, hidden=32, epochs=2000, learning_rate=0.05, seed=0):
        from .learning import TanhNetwork

        net = TanhNetwork.xavier(X.shape[1], (int(hidden),), X.shape[1], seed)
        mu, sd = X.mean(axis=0), X.std(axis=0) + 1e-12
        Z = (X - mu) / sd
        target = Y - X
        scale = np.abs(target).max() + 1e-300
        # fold input standardisation into the first layer afterwards
        velocity = None
        m = X.shape[0]
        for _ in range(int(epochs)):
            out, caches, h = net.values(Z, cache=True)
            R = out - target / scale
            gW, gb = net.backward_values(2.0 * R / m, caches, h)
            grads = [g for pair in zip(gW, gb) for g in pair]
            params = [p for pair in zip(net.weights, net.biases) for p in pair]
            if velocity is None:
                velocity = [np.zeros_like(p) for p in params]
            for p, v, g in zip(params, velocity, grads):
                v *= 0.9
                v += g
                p -= learning_rate * v
        W0 = net.weights[0] / sd
        net.biases[0] = net.biases[0] - W0 @ mu
        net.weights[0] = W0
        net.weights[-1] = net.weights[-1] * scale
        net.biases[-1] = net.biases[-1] * scale
        return cls(net)

    def predict(self, X):
        return X + self.network.values(X)

    def slopes(self, X):
        m, d = X.shape
        _, J, _ = self.network.forward_generator(X, np.zeros_like(X), np.zeros((m, d, d)))
        return J + np.eye(d)

    def to_dict(self):
        return {"kind": "network", **self.network.to_dict()}

    @classmethod
    def from_dict(cls, d):
        from .learning import TanhNetwork

        return cls(TanhNetwork(d["weights"], d["biases"]))


class CoefficientEstimate(SdeModel):
    """Estimated SDE coefficients usable wherever an :class:`SdeModel` is expected.

    Attributes
    ----------
    predictor : BinnedPredictor or NetworkPredictor
        Next-state predictor ``y_hat``.
    diffusion_edges, diffusion_var
        Bin grid and per-bin, per-axis residual variance of ``y - y_hat``.
    delta_t : float
    metadata : dict
    """

    name = "estimate"

    def __init__(self, predictor, delta_t, diffusion_edges, diffusion_var, diffusion_counts, metadata=None):
        self.predictor = predictor
        self.delta_t = float(delta_t)
        self.dim = predictor.dim
        self.diffusion_edges = [np.asarray(e, dtype=float) for e in diffusion_edges]
        self.diffusion_var = np.asarray(diffusion_var, dtype=float)
        self.diffusion_counts = np.asarray(diffusion_counts, dtype=int)
        self._var_grid = BinnedPredictor(self.diffusion_edges, np.zeros((len(self.diffusion_counts), self.dim + 1, self.dim)), self.diffusion_counts)
        self.metadata = dict(metadata or {})

    @property
    def extrapolated(self) -> bool:
        """True when the last query left the training hull."""
        return bool(self.predictor.last_extrapolated or self._var_grid.last_extrapolated)

    def _drift(self, X):
        return (self.predictor.predict(X) - X) / self.delta_t

    def _diffusion(self, X):
        idx = self._var_grid.bin_of(X)
        return _diag_batch(np.sqrt(self.diffusion_var[idx] / self.delta_t))

    def _drift_jacobian(self, X):
        return (self.predictor.slopes(X) - np.eye(self.dim)) / self.delta_t

    def _drift_hessian(self, X):
        if self.predictor.kind != "binned":
            return super()._drift_hessian(X)
        return np.zeros((X.shape[0], self.dim, self.dim, self.dim))

    def params(self):
        return {"delta_t": self.delta_t, **self.metadata}

    def to_dict(self):
        return {
            "delta_t": self.delta_t,
            "predictor": self.predictor.to_dict(),
            "diffusion": {
                "edges": [e.tolist() for e in self.diffusion_edges],
                "variance": self.diffusion_var.tolist(),
                "counts": self.diffusion_counts.tolist(),
            },
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["predictor"]
        pred = BinnedPredictor.from_dict(p) if p["kind"] == "binned" else NetworkPredictor.from_dict(p)
        diff = d["diffusion"]
        return cls(pred, d["delta_t"], diff["edges"], diff["variance"], diff["counts"], d.get("metadata"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_drift(pairs, bins=50, kind="binned", **network_options):
    """Fit the next-state predictor; ``b_hat(x) = (y_hat(x) - x)/dt``.

    Returns the predictor; wrap it with :func:`estimate_diffusion` (or use
    :func:`estimate_coefficients`) to obtain a full estimate.
    """
    X, Y, _ = _pairs(pairs)
    if kind == "binned":
        return BinnedPredictor.fit(X, Y, bins=bins)
    if kind == "network":
        return NetworkPredictor.fit(X, Y, **network_options)
    raise InvalidArgumentError(f"unknown predictor kind {kind!r}")


def estimate_diffusion(pairs, drift_predictor, bins=50) -> CoefficientEstimate:
    """Per-bin residual variance of ``y - y_hat`` turned into a diagonal ``sigma_hat``."""
    X, Y, dt = _pairs(pairs)
    r2 = (Y - drift_predictor.predict(X)) ** 2
    grid = BinnedPredictor.fit(X, r2, bins=bins, min_affine=X.shape[0] + 1)  # constant fit = bin mean
    var = np.maximum(grid.coef[:, 0, :], 0.0)
    meta = {"samples": int(X.shape[0]), "delta_t": dt, "estimator": drift_predictor.kind,
            "bins": [len(e) - 1 for e in grid.edges]}
    return CoefficientEstimate(drift_predictor, dt, grid.edges, var, grid.counts, meta)


def estimate_coefficients(pairs, bins=50, kind="binned", **network_options) -> CoefficientEstimate:
    """Drift predictor and diffusion variance grid in one call."""
    pred = estimate_drift(pairs, bins=bins, kind=kind, **network_options)
    return estimate_diffusion(pairs, pred, bins=bins)
