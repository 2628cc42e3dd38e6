"""Benchmark stochastic differential equations.

Every model describes ``dX = b(X) dt + sigma(X) dW`` and evaluates its
coefficients on a single state of shape ``(dim,)`` or a batch of shape
``(m, dim)``.  Besides drift and diffusion, each model supplies the first
and second derivatives of the drift and of the diffusion covariance
``a = sigma sigma^T``; these feed the second-order generator action.

Index conventions for the derivative arrays (batch axis first):

* ``drift_jacobian[m, i, k]  = d b_i / d x_k``
* ``drift_hessian[m, i, k, l] = d^2 b_i / d x_k d x_l``
* ``cov_jacobian[m, i, j, k]  = d a_ij / d x_k``
* ``cov_hessian[m, i, j, k, l] = d^2 a_ij / d x_k d x_l``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import eval_hermite, eval_hermitenorm

from .errors import DomainError, InvalidArgumentError, NotAvailableError

__all__ = [
    "SdeModel",
    "OrnsteinUhlenbeck",
    "StuartLandau",
    "StuartLandauCartesian",
    "TripleWell",
    "NeuralMass",
    "MODEL_REGISTRY",
    "make_model",
    "drift_eval",
    "diffusion_eval",
    "analytic_generator_eigs",
    "analytic_eigenfunction_eval",
]


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidArgumentError(f"state has length {x.shape[0]}, model dimension is {dim}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise InvalidArgumentError(f"expected state of shape ({dim},) or (m, {dim}), got {x.shape}")


def _unbatch(arr, single):
    return arr[0] if single else arr


class SdeModel:
    """Base class for registered SDE models.

    Subclasses are frozen dataclasses that implement the batched private
    methods ``_drift``, ``_diffusion`` and the derivative hooks.  The
    public methods handle shape validation and single-state squeezing.
    """

    name: str = "sde"
    dim: int = 1

    # -- public evaluators -------------------------------------------------
    def drift(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._drift(X), single)

    def diffusion(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._diffusion(X), single)

    def cov(self, x):
        """Diffusion covariance ``a(x) = sigma(x) sigma(x)^T``."""
        X, single = _as_batch(x, self.dim)
        s = self._diffusion(X)
        return _unbatch(np.einsum("mik,mjk->mij", s, s), single)

    def drift_jacobian(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._drift_jacobian(X), single)

    def drift_hessian(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._drift_hessian(X), single)

    def cov_jacobian(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._cov_jacobian(X), single)

    def cov_hessian(self, x):
        X, single = _as_batch(x, self.dim)
        return _unbatch(self._cov_hessian(X), single)

    def params(self) -> dict:
        return asdict(self)

    # -- hooks ---------------------------------------------------------------
    def _drift(self, X):
        raise NotImplementedError

    def _diffusion(self, X):
        raise NotImplementedError

    def _drift_jacobian(self, X):
        raise NotAvailableError(f"{self.name}: drift derivatives not provided")

    def _drift_hessian(self, X):
        raise NotAvailableError(f"{self.name}: drift derivatives not provided")

    def _cov_jacobian(self, X):
        d = self.dim
        return np.zeros((X.shape[0], d, d, d))

    def _cov_hessian(self, X):
        d = self.dim
        return np.zeros((X.shape[0], d, d, d, d))

    # -- analytic spectra ------------------------------------------------------
    def generator_eigs(self, indices):
        raise NotAvailableError(f"no analytic spectrum for model '{self.name}'")

    def eigenfunction(self, index, x):
        raise NotAvailableError(f"no analytic eigenfunctions for model '{self.name}'")


def _diag_batch(values):
    """(m, d) -> (m, d, d) diagonal matrices."""
    m, d = values.shape
    out = np.zeros((m, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = values
    return out


@dataclass(frozen=True)
class OrnsteinUhlenbeck(SdeModel):
    """``dX = theta (mu0 - X) dt + sigma dW``."""

    theta: float = 1.0
    mu0: float = 0.0
    sigma: float = 0.1

    name = "ou"
    dim = 1

    def __post_init__(self):
        if not self.theta > 0:
            raise InvalidArgumentError("OU requires theta > 0")
        if self.sigma < 0:
            raise InvalidArgumentError("OU requires sigma >= 0")

    def _drift(self, X):
        return self.theta * (self.mu0 - X)

    def _diffusion(self, X):
        return np.full((X.shape[0], 1, 1), float(self.sigma))

    def _drift_jacobian(self, X):
        return np.full((X.shape[0], 1, 1), -float(self.theta))

    def _drift_hessian(self, X):
        return np.zeros((X.shape[0], 1, 1, 1))

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.theta)

    def generator_eigs(self, indices):
        out = []
        for n in indices:
            n = int(n)
            if n < 0:
                raise InvalidArgumentError("OU mode index must be >= 0")
            out.append(complex(-n * self.theta))
        return np.array(out, dtype=complex)

    def eigenfunction(self, index, x):
        # Probabilists' Hermite: He_n((x - mu0)/s) with s^2 = sigma^2/(2 theta)
        # is the exact eigenfunction for eigenvalue -n*theta.
        n = int(index)
        if n < 0:
            raise InvalidArgumentError("OU mode index must be >= 0")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim >= 1 and x.shape[-1] == 1:
            x = x[..., 0]
        u = (x - self.mu0) / math.sqrt(self.stationary_variance)
        return eval_hermitenorm(n, u).astype(complex)

    def conditional_moments(self, x, t):
        """Exact mean and variance of ``X_t`` given ``X_0 = x``."""
        decay = np.exp(-self.theta * t)
        mean = self.mu0 + (np.asarray(x, dtype=np.float64) - self.mu0) * decay
        var = self.stationary_variance * (1.0 - decay**2)
        return mean, var


@dataclass(frozen=True)
class StuartLandau(SdeModel):
    """Stochastic Stuart-Landau oscillator in polar coordinates ``(r, theta)``.

    ``dr = (delta r - kappa r^3 + eps^2/(2r)) dt + eps dW_r``,
    ``dtheta = (gamma - beta r^2) dt + (eps/r) dW_theta``.
    """

    delta: float = 0.25
    kappa: float = 1.0
    epsilon: float = 0.05
    gamma: float = 1.0
    beta: float = 1.0

    name = "stuart-landau"
    dim = 2

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidArgumentError("Stuart-Landau requires kappa > 0")

    @property
    def radius(self) -> float:
        return math.sqrt(self.delta / self.kappa)

    @property
    def twist(self) -> float:
        return self.beta / self.kappa

    def _radii(self, X):
        r = X[:, 0]
        if np.any(r <= 0):
            raise DomainError("Stuart-Landau polar form requires r > 0")
        return r

    def _drift(self, X):
        r = self._radii(X)
        e2 = self.epsilon**2
        br = self.delta * r - self.kappa * r**3 + e2 / (2.0 * r)
        bt = self.gamma - self.beta * r**2
        return np.stack([br, bt], axis=1)

    def _diffusion(self, X):
        r = self._radii(X)
        return _diag_batch(np.stack([np.full_like(r, self.epsilon), self.epsilon / r], axis=1))

    def _drift_jacobian(self, X):
        r = self._radii(X)
        e2 = self.epsilon**2
        out = np.zeros((X.shape[0], 2, 2))
        out[:, 0, 0] = self.delta - 3.0 * self.kappa * r**2 - e2 / (2.0 * r**2)
        out[:, 1, 0] = -2.0 * self.beta * r
        return out

    def _drift_hessian(self, X):
        r = self._radii(X)
        e2 = self.epsilon**2
        out = np.zeros((X.shape[0], 2, 2, 2))
        out[:, 0, 0, 0] = -6.0 * self.kappa * r + e2 / r**3
        out[:, 1, 0, 0] = -2.0 * self.beta
        return out

    def _cov_jacobian(self, X):
        r = self._radii(X)
        out = np.zeros((X.shape[0], 2, 2, 2))
        out[:, 1, 1, 0] = -2.0 * self.epsilon**2 / r**3
        return out

    def _cov_hessian(self, X):
        r = self._radii(X)
        out = np.zeros((X.shape[0], 2, 2, 2, 2))
        out[:, 1, 1, 0, 0] = 6.0 * self.epsilon**2 / r**4
        return out

    def generator_eigs(self, indices):
        R2 = self.delta / self.kappa
        out = []
        for idx in indices:
            l, n = (int(v) for v in idx)
            if l < 0:
                raise InvalidArgumentError("radial index l must be >= 0")
            # big-O corrections are dropped
            if l == 0:
                out.append(complex(-(n**2) * self.epsilon**2 / (2.0 * R2), n * (1.0 - self.delta)))
            else:
                out.append(complex(-2.0 * l * self.delta, n * (1.0 - self.delta)))
        return np.array(out, dtype=complex)

    def eigenfunction(self, index, x):
        l, n = (int(v) for v in index)
        x = np.asarray(x, dtype=np.float64)
        r, th = x[..., 0], x[..., 1]
        if np.any(r <= 0):
            raise DomainError("Stuart-Landau eigenfunctions require r > 0")
        R = self.radius
        phase = np.exp(1j * n * (th - self.twist * np.log(r / R)))
        if l == 0:
            return phase
        norm = 1.0 / math.sqrt(2.0 ** abs(n) * math.factorial(abs(n)))
        u = math.sqrt(2.0 * self.delta) * (r - R) / self.epsilon
        return norm * eval_hermite(l, u) * phase


@dataclass(frozen=True)
class StuartLandauCartesian(SdeModel):
    """Cartesian form of the Stuart-Landau oscillator (cross-checking only)."""

    delta: float = 0.25
    kappa: float = 1.0
    epsilon: float = 0.05
    gamma: float = 1.0
    beta: float = 1.0

    name = "stuart-landau-cartesian"
    dim = 2

    def _drift(self, X):
        x, y = X[:, 0], X[:, 1]
        rho = x**2 + y**2
        radial = self.delta - self.kappa * rho
        spin = self.gamma - self.beta * rho
        return np.stack([radial * x - spin * y, spin * x + radial * y], axis=1)

    def _diffusion(self, X):
        return _diag_batch(np.full(X.shape, float(self.epsilon)))

    def _drift_jacobian(self, X):
        x, y = X[:, 0], X[:, 1]
        d, k, g, b = self.delta, self.kappa, self.gamma, self.beta
        out = np.empty((X.shape[0], 2, 2))
        out[:, 0, 0] = d - 3 * k * x**2 - k * y**2 + 2 * b * x * y
        out[:, 0, 1] = -2 * k * x * y - g + b * x**2 + 3 * b * y**2
        out[:, 1, 0] = g - 3 * b * x**2 - b * y**2 - 2 * k * x * y
        out[:, 1, 1] = -2 * b * x * y + d - k * x**2 - 3 * k * y**2
        return out

    def _drift_hessian(self, X):
        x, y = X[:, 0], X[:, 1]
        k, b = self.kappa, self.beta
        out = np.empty((X.shape[0], 2, 2, 2))
        out[:, 0, 0, 0] = -6 * k * x + 2 * b * y
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = -2 * k * y + 2 * b * x
        out[:, 0, 1, 1] = -2 * k * x + 6 * b * y
        out[:, 1, 0, 0] = -6 * b * x - 2 * k * y
        out[:, 1, 0, 1] = out[:, 1, 1, 0] = -2 * b * y - 2 * k * x
        out[:, 1, 1, 1] = -2 * b * x - 6 * k * y
        return out


# physicists' Hermite polynomials H_0..H_3, used for derivatives of exp(-u^2)
_HERMITE_PHYS = (
    lambda u: np.ones_like(u),
    lambda u: 2 * u,
    lambda u: 4 * u**2 - 2,
    lambda u: 8 * u**3 - 12 * u,
)


@dataclass(frozen=True)
class TripleWell(SdeModel):
    """Gradient system ``dX = -grad V(X) dt + sigma dW`` on the triple-well landscape."""

    noise: tuple = (1.09, 1.09)

    name = "triple-well"
    dim = 2

    # (amplitude, x-centre, y-centre) of the Gaussian terms of V
    _GAUSSIANS = ((3.0, 0.0, 1.0 / 3.0), (-3.0, 0.0, 5.0 / 3.0), (-5.0, 1.0, 0.0), (-5.0, -1.0, 0.0))
    _QUARTIC = 0.2
    _Y_SHIFT = 1.0 / 3.0

    def __post_init__(self):
        object.__setattr__(self, "noise", tuple(float(v) for v in self.noise))
        if len(self.noise) != 2:
            raise InvalidArgumentError("triple-well noise needs one level per axis")

    def potential(self, x):
        X, single = _as_batch(x, 2)
        return _unbatch(self._potential_partial(X, 0, 0), single)

    def _potential_partial(self, X, p, q):
        """d^{p+q} V / dx^p dy^q for p + q <= 3."""
        x, y = X[:, 0], X[:, 1]
        out = np.zeros(X.shape[0])
        for c, a, b in self._GAUSSIANS:
            u, w = x - a, y - b
            g = c * np.exp(-(u**2) - w**2)
            out += (-1) ** (p + q) * _HERMITE_PHYS[p](u) * _HERMITE_PHYS[q](w) * g
        quartic = (1.0, 4.0, 12.0, 24.0)
        power = (4, 3, 2, 1)
        if q == 0:
            out += self._QUARTIC * quartic[p] * x ** power[p]
        if p == 0:
            out += self._QUARTIC * quartic[q] * (y - self._Y_SHIFT) ** power[q]
        return out

    def _drift(self, X):
        return -np.stack([self._potential_partial(X, 1, 0), self._potential_partial(X, 0, 1)], axis=1)

    def _diffusion(self, X):
        return _diag_batch(np.broadcast_to(np.array(self.noise), X.shape).copy())

    def _drift_jacobian(self, X):
        out = np.empty((X.shape[0], 2, 2))
        for i in range(2):
            for k in range(2):
                orders = [0, 0]
                orders[i] += 1
                orders[k] += 1
                out[:, i, k] = -self._potential_partial(X, *orders)
        return out

    def _drift_hessian(self, X):
        out = np.empty((X.shape[0], 2, 2, 2))
        for i in range(2):
            for k in range(2):
                for l in range(2):
                    orders = [0, 0]
                    orders[i] += 1
                    orders[k] += 1
                    orders[l] += 1
                    out[:, i, k, l] = -self._potential_partial(X, *orders)
        return out


@dataclass(frozen=True)
class NeuralMass(SdeModel):
    """Two-dimensional firing-rate (r) / mean-voltage (v) population model.

    ``dr = (Delta/pi + 2 r v) dt``, ``dv = (v^2 + J r + I - pi^2 r^2) dt``
    plus additive noise.  ``sigma_r`` and ``sigma_v`` are per-step noise
    standard deviations at the reference step ``noise_dt``, so the
    diffusion coefficient is ``sigma / sqrt(noise_dt)``.

    The input ``I`` is a latent two-state Markov chain over ``levels``
    handled by the simulator; :meth:`drift` uses ``levels[0]`` unless an
    explicit ``current`` is passed.
    """

    Delta: float = 1.0
    J: float = 15.0
    sigma_r: float = 0.01
    sigma_v: float = 0.01
    noise_dt: float = 0.01
    levels: tuple = (-2.0, -10.0)
    stay_prob: float = 0.9999

    name = "neural-mass"
    dim = 2

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if len(self.levels) != 2:
            raise InvalidArgumentError("neural-mass input needs exactly two levels")
        if not 0.0 < self.stay_prob < 1.0:
            raise InvalidArgumentError("stay probability must lie in (0, 1)")
        if self.noise_dt <= 0:
            raise InvalidArgumentError("noise_dt must be positive")

    def drift(self, x, current=None):
        X, single = _as_batch(x, 2)
        return _unbatch(self._drift(X, current), single)

    def _drift(self, X, current=None):
        inp = self.levels[0] if current is None else current
        r, v = X[:, 0], X[:, 1]
        br = self.Delta / math.pi + 2.0 * r * v
        bv = v**2 + self.J * r + inp - math.pi**2 * r**2
        return np.stack([br, bv], axis=1)

    def _diffusion(self, X):
        scale = np.array([self.sigma_r, self.sigma_v]) / math.sqrt(self.noise_dt)
        return _diag_batch(np.broadcast_to(scale, X.shape).copy())

    def _drift_jacobian(self, X):
        r, v = X[:, 0], X[:, 1]
        out = np.empty((X.shape[0], 2, 2))
        out[:, 0, 0] = 2 * v
        out[:, 0, 1] = 2 * r
        out[:, 1, 0] = self.J - 2 * math.pi**2 * r
        out[:, 1, 1] = 2 * v
        return out

    def _drift_hessian(self, X):
        out = np.zeros((X.shape[0], 2, 2, 2))
        out[:, 0, 0, 1] = out[:, 0, 1, 0] = 2.0
        out[:, 1, 0, 0] = -2 * math.pi**2
        out[:, 1, 1, 1] = 2.0
        return out


MODEL_REGISTRY = {
    "ou": OrnsteinUhlenbeck,
    "stuart-landau": StuartLandau,
    "stuart-landau-cartesian": StuartLandauCartesian,
    "triple-well": TripleWell,
    "neural-mass": NeuralMass,
}


def make_model(name: str, **params) -> SdeModel:
    """Instantiate a registered model by name."""
    try:
        cls = MODEL_REGISTRY[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown model '{name}'; choose from {sorted(MODEL_REGISTRY)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for model '{name}': {exc}") from None


def drift_eval(model: SdeModel, x):
    return model.drift(x)


def diffusion_eval(model: SdeModel, x):
    return model.diffusion(x)


def analytic_generator_eigs(model: SdeModel, indices: Sequence):
    """Closed-form generator eigenvalues for OU (``n``) or Stuart-Landau (``(l, n)``)."""
    return model.generator_eigs(indices)


def analytic_eigenfunction_eval(model: SdeModel, index, x):
    return model.eigenfunction(index, x)
