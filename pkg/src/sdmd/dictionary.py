"""Fixed observable dictionaries and the generator actions on them.

All fixed families (monomial, Hermite, Gaussian RBF, Fourier) are tensor
products of one-dimensional factors, ``psi_j(x) = prod_i f_{j,i}(x_i)``.
Partial derivatives of any order are then products of 1-D derivative
tables, which gives exact Jacobians, Hessians and the third and fourth
order tensors needed for the second-order generator action.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import InvalidArgumentError, UnsupportedFamilyError

__all__ = [
    "Dictionary",
    "ProductDictionary",
    "MonomialDictionary",
    "HermiteDictionary",
    "GaussianRBFDictionary",
    "FourierDictionary",
    "TransformedDictionary",
    "make_dictionary",
    "dict_eval",
    "dict_jacobian",
    "dict_hessian",
    "generator_action",
    "generator_action_deterministic",
    "generator_action_second",
]


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidArgumentError(f"point has length {x.shape[0]}, dictionary dimension is {dim}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise InvalidArgumentError(f"expected points of shape ({dim},) or (m, {dim}), got {x.shape}")


class Dictionary:
    """Common interface: ``evaluate``, ``jacobian`` and ``hessian`` on batches.

    Shapes for ``m`` points: values ``(m, N)``, Jacobian ``(m, N, dim)``,
    Hessian ``(m, N, dim, dim)``.  A single point of shape ``(dim,)`` drops
    the leading axis.
    """

    family = "abstract"
    size: int
    dim: int
    is_complex = False

    def evaluate(self, x):
        X, single = _as_batch(x, self.dim)
        out = self._values(X)
        return out[0] if single else out

    def jacobian(self, x):
        X, single = _as_batch(x, self.dim)
        out = self._jacobian(X)
        return out[0] if single else out

    def hessian(self, x):
        X, single = _as_batch(x, self.dim)
        out = self._hessian(X)
        return out[0] if single else out

    def _apply_generator(self, X, b, a):
        """``sum_i b_i d_i psi + 1/2 sum_ik a_ik d_ik psi`` for batches."""
        J = self._jacobian(X)
        out = np.einsum("mi,mni->mn", b, J)
        if a is not None:
            H = self._hessian(X)
            out = out + 0.5 * np.einsum("mik,mnik->mn", a, H)
        return out

    def to_spec(self) -> dict:
        raise NotImplementedError


class ProductDictionary(Dictionary):
    """Tensor-product family; subclasses provide per-axis derivative tables."""

    max_derivative = 4

    def _axis_table(self, x, axis, order):
        """Array ``(order+1, m, N)`` with ``d^q f_{j,axis}(x)`` for q = 0..order."""
        raise NotImplementedError

    def _tables(self, X, order):
        return [self._axis_table(X[:, i], i, order) for i in range(self.dim)]

    @staticmethod
    def _partial(tables, counts):
        out = tables[0][counts[0]]
        for i in range(1, len(tables)):
            out = out * tables[i][counts[i]]
        return out

    def derivative_tensor(self, x, order: int):
        """All partial derivatives of a given order, shape ``(m, N) + (dim,)*order``."""
        if order > self.max_derivative:
            raise UnsupportedFamilyError(f"{self.family} provides derivatives up to order {self.max_derivative}")
        X, single = _as_batch(x, self.dim)
        out = self._derivative_tensor(X, order, self._tables(X, order))
        return out[0] if single else out

    def _derivative_tensor(self, X, order, tables):
        m, d = X.shape
        dtype = complex if self.is_complex else float
        out = np.empty((m, self.size) + (d,) * order, dtype=dtype)
        cache = {}
        for idx in itertools.product(range(d), repeat=order):
            counts = tuple(np.bincount(np.asarray(idx, dtype=int), minlength=d)) if order else (0,) * d
            if counts not in cache:
                cache[counts] = self._partial(tables, counts)
            out[(slice(None), slice(None)) + idx] = cache[counts]
        return out

    def _values(self, X):
        return self._derivative_tensor(X, 0, self._tables(X, 0))

    def _jacobian(self, X):
        return self._derivative_tensor(X, 1, self._tables(X, 1))

    def _hessian(self, X):
        return self._derivative_tensor(X, 2, self._tables(X, 2))

    def _apply_generator(self, X, b, a):
        tables = self._tables(X, 2 if a is not None else 1)
        J = self._derivative_tensor(X, 1, tables)
        out = np.einsum("mi,mni->mn", b, J)
        if a is not None:
            H = self._derivative_tensor(X, 2, tables)
            out = out + 0.5 * np.einsum("mik,mnik->mn", a, H)
        return out


def _graded_multi_indices(dim, max_degree):
    idx = [a for a in itertools.product(range(max_degree + 1), repeat=dim) if sum(a) <= max_degree]
    # graded order, then reverse-lexicographic within a degree so x precedes y
    idx.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    return np.array(idx, dtype=int).reshape(-1, dim)


def _falling(p, q):
    """p (p-1) ... (p-q+1) elementwise, zero where q > p."""
    out = np.ones_like(p, dtype=float)
    for k in range(q):
        out = out * (p - k)
    return np.where(p >= q, out, 0.0)


class MonomialDictionary(ProductDictionary):
    """All monomials ``x^alpha`` with total degree ``|alpha| <= max_degree``."""

    family = "monomial"

    def __init__(self, dim: int = 1, max_degree: int = 2):
        if max_degree < 0 or dim < 1:
            raise InvalidArgumentError("monomial dictionary needs dim >= 1 and max_degree >= 0")
        self.dim = int(dim)
        self.max_degree = int(max_degree)
        self.exponents = _graded_multi_indices(self.dim, self.max_degree)
        self.size = len(self.exponents)

    def _axis_table(self, x, axis, order):
        p = self.exponents[:, axis]
        out = np.empty((order + 1, x.shape[0], self.size))
        for q in range(order + 1):
            out[q] = _falling(p, q)[None, :] * np.power(x[:, None], np.maximum(p - q, 0)[None, :])
        return out

    def to_spec(self):
        return {"family": "monomial", "dim": self.dim, "max_degree": self.max_degree}


def _hermite_phys_table(u, nmax):
    H = np.empty((nmax + 1,) + u.shape)
    H[0] = 1.0
    if nmax >= 1:
        H[1] = 2.0 * u
    for k in range(1, nmax):
        H[k + 1] = 2.0 * u * H[k] - 2.0 * k * H[k - 1]
    return H


def _hermite_prob_table(u, nmax):
    He = np.empty((nmax + 1,) + u.shape)
    He[0] = 1.0
    if nmax >= 1:
        He[1] = u
    for k in range(1, nmax):
        He[k + 1] = u * He[k] - k * He[k - 1]
    return He


class HermiteDictionary(ProductDictionary):
    """Physicists' Hermite products ``prod_i H_{alpha_i}((x_i - c_i)/s_i)``, ``|alpha| <= max_order``."""

    family = "hermite"

    def __init__(self, dim: int = 1, max_order: int = 2, center=0.0, scale=1.0):
        self.dim = int(dim)
        self.max_order = int(max_order)
        if self.max_order < 0 or self.dim < 1:
            raise InvalidArgumentError("hermite dictionary needs dim >= 1 and max_order >= 0")
        self.center = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,)).copy()
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.dim,)).copy()
        if np.any(self.scale <= 0):
            raise InvalidArgumentError("hermite scale must be positive")
        self.orders = _graded_multi_indices(self.dim, self.max_order)
        self.size = len(self.orders)

    def _axis_table(self, x, axis, order):
        s = self.scale[axis]
        u = (x - self.center[axis]) / s
        H = _hermite_phys_table(u, self.max_order)  # (nmax+1, m)
        n = self.orders[:, axis]
        out = np.empty((order + 1, x.shape[0], self.size))
        for q in range(order + 1):
            coef = (2.0**q) * _falling(n, q) / s**q
            out[q] = coef[None, :] * H[np.maximum(n - q, 0)].T
        return out

    def to_spec(self):
        return {"family": "hermite", "dim": self.dim, "max_order": self.max_order,
                "center": self.center.tolist(), "scale": self.scale.tolist()}


class GaussianRBFDictionary(ProductDictionary):
    """Isotropic Gaussians ``exp(-|x - c_j|^2 / (2 w_j^2))``."""

    family = "gaussian_rbf"

    def __init__(self, centers, widths):
        centers = np.asarray(centers, dtype=float)
        if centers.ndim == 1:
            centers = centers[:, None]
        self.centers = centers
        self.size, self.dim = centers.shape
        self.widths = np.broadcast_to(np.asarray(widths, dtype=float), (self.size,)).copy()
        if np.any(self.widths <= 0):
            raise InvalidArgumentError("RBF widths must be positive")

    def _axis_table(self, x, axis, order):
        w = self.widths[None, :]
        u = (x[:, None] - self.centers[None, :, axis]) / w
        g = np.exp(-0.5 * u**2)
        He = _hermite_prob_table(u, order)
        out = np.empty((order + 1, x.shape[0], self.size))
        for q in range(order + 1):
            out[q] = (-1) ** q * He[q] * g / w**q
        return out

    def to_spec(self):
        return {"family": "gaussian_rbf", "centers": self.centers.tolist(), "widths": self.widths.tolist()}


class FourierDictionary(ProductDictionary):
    """Polar Fourier family ``exp(i n theta) exp(i 2 pi k (r - r_min)/(r_max - r_min))`` on states ``(r, theta)``.

    ``angular_modes`` and ``radial_modes`` are the cut-offs ``|n|`` and
    ``|k|``; functions are ordered with ``n`` outer and ``k`` inner.
    """

    family = "fourier"
    is_complex = True
    max_derivative = 2

    def __init__(self, radial_modes: int = 3, angular_modes: int = 10, r_range=(0.4, 0.8)):
        self.radial_modes = int(radial_modes)
        self.angular_modes = int(angular_modes)
        self.r_range = (float(r_range[0]), float(r_range[1]))
        if self.r_range[1] <= self.r_range[0]:
            raise InvalidArgumentError("radial periodisation interval is degenerate")
        self.dim = 2
        ns, ks = np.meshgrid(
            np.arange(-self.angular_modes, self.angular_modes + 1),
            np.arange(-self.radial_modes, self.radial_modes + 1),
            indexing="ij",
        )
        self.n = ns.ravel()
        self.k = ks.ravel()
        self.size = self.n.size
        self.omega = 2.0 * np.pi * self.k / (self.r_range[1] - self.r_range[0])

    def _axis_table(self, x, axis, order):
        if axis == 0:
            freq = self.omega
            base = np.exp(1j * (x[:, None] - self.r_range[0]) * freq[None, :])
        else:
            freq = self.n.astype(float)
            base = np.exp(1j * x[:, None] * freq[None, :])
        out = np.empty((order + 1, x.shape[0], self.size), dtype=complex)
        for q in range(order + 1):
            out[q] = (1j * freq[None, :]) ** q * base
        return out

    def mode_index(self, n: int, k: int = 0) -> int:
        hit = np.flatnonzero((self.n == n) & (self.k == k))
        if hit.size == 0:
            raise InvalidArgumentError(f"mode (n={n}, k={k}) not in dictionary")
        return int(hit[0])

    def to_spec(self):
        return {"family": "fourier", "radial_modes": self.radial_modes, "angular_modes": self.angular_modes,
                "r_range": list(self.r_range)}


class TransformedDictionary(Dictionary):
    """Linear recombination ``Psi(x) @ C`` of a base dictionary."""

    family = "transformed"

    def __init__(self, base: Dictionary, coefficients):
        C = np.asarray(coefficients)
        if C.ndim != 2 or C.shape[0] != base.size:
            raise InvalidArgumentError("coefficient matrix must have base.size rows")
        self.base = base
        self.C = C
        self.size = C.shape[1]
        self.dim = base.dim
        self.is_complex = base.is_complex or np.iscomplexobj(C)

    def _values(self, X):
        return self.base._values(X) @ self.C

    def _jacobian(self, X):
        return np.einsum("mni,nk->mki", self.base._jacobian(X), self.C)

    def _hessian(self, X):
        return np.einsum("mnij,nk->mkij", self.base._hessian(X), self.C)

    def _apply_generator(self, X, b, a):
        return self.base._apply_generator(X, b, a) @ self.C


def make_dictionary(spec: dict) -> Dictionary:
    """Build a fixed dictionary from its JSON specification."""
    spec = dict(spec)
    family = spec.pop("family", None)
    try:
        if family == "monomial":
            return MonomialDictionary(**spec)
        if family == "hermite":
            return HermiteDictionary(**spec)
        if family == "gaussian_rbf":
            return GaussianRBFDictionary(**spec)
        if family == "fourier":
            return FourierDictionary(**spec)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad {family} dictionary parameters: {exc}") from None
    raise InvalidArgumentError(f"unknown fixed dictionary family '{family}'")


def dict_eval(dictionary: Dictionary, x):
    return dictionary.evaluate(x)


def dict_jacobian(dictionary: Dictionary, x):
    return dictionary.jacobian(x)


def dict_hessian(dictionary: Dictionary, x):
    return dictionary.hessian(x)


def _coefficients(model, X):
    b = np.asarray(model.drift(X), dtype=float).reshape(X.shape)
    a = np.asarray(model.cov(X), dtype=float).reshape(X.shape[0], X.shape[1], X.shape[1])
    return b, a


def generator_action(dictionary: Dictionary, model, x):
    """Ito generator applied to every dictionary function: ``(A psi_j)(x)``."""
    X, single = _as_batch(x, dictionary.dim)
    b, a = _coefficients(model, X)
    out = dictionary._apply_generator(X, b, a)
    return out[0] if single else out


def generator_action_deterministic(dictionary: Dictionary, model, x):
    """Lie derivative ``b(x) . grad psi_j(x)`` (diffusion ignored)."""
    X, single = _as_batch(x, dictionary.dim)
    b = np.asarray(model.drift(X), dtype=float).reshape(X.shape)
    out = dictionary._apply_generator(X, b, None)
    return out[0] if single else out


def generator_action_second(dictionary: Dictionary, model, x):
    """``(A^2 psi_j)(x)``: the generator applied to the closed form of ``A psi_j``.

    Requires fourth derivatives of the dictionary and second derivatives of
    the model's drift and diffusion covariance.
    """
    if not isinstance(dictionary, ProductDictionary) or dictionary.max_derivative < 4:
        raise UnsupportedFamilyError(f"family '{dictionary.family}' has no fourth derivatives")
    X, single = _as_batch(x, dictionary.dim)
    tables = dictionary._tables(X, 4)
    P1, P2, P3, P4 = (dictionary._derivative_tensor(X, q, tables) for q in (1, 2, 3, 4))
    b = np.asarray(model.drift(X), dtype=float).reshape(X.shape)
    a = np.asarray(model.cov(X), dtype=float)
    if a.ndim == 2:
        a = a[None]
    db = model.drift_jacobian(X).reshape(a.shape)  # [m, i, k]
    ddb = model.drift_hessian(X).reshape(a.shape + (X.shape[1],))  # [m, i, k, l]
    da = model.cov_jacobian(X).reshape(a.shape + (X.shape[1],))  # [m, i, j, k]
    dda = model.cov_hessian(X).reshape(a.shape + (X.shape[1],) * 2)  # [m, i, j, k, l]

    # gradient of g = A psi:  d_k g
    grad_g = (
        np.einsum("mik,mni->mnk", db, P1)
        + np.einsum("mi,mnik->mnk", b, P2)
        + 0.5 * np.einsum("mijk,mnij->mnk", da, P2)
        + 0.5 * np.einsum("mij,mnijk->mnk", a, P3)
    )
    # Hessian of g contracted with a:  sum_kl a_kl d_kl g
    hess_g = (
        np.einsum("mikl,mni->mnkl", ddb, P1)
        + np.einsum("mik,mnil->mnkl", db, P2)
        + np.einsum("mil,mnik->mnkl", db, P2)
        + np.einsum("mi,mnikl->mnkl", b, P3)
        + 0.5 * np.einsum("mijkl,mnij->mnkl", dda, P2)
        + 0.5 * np.einsum("mijk,mnijl->mnkl", da, P3)
        + 0.5 * np.einsum("mijl,mnijk->mnkl", da, P3)
        + 0.5 * np.einsum("mij,mnijkl->mnkl", a, P4)
    )
    out = np.einsum("mk,mnk->mn", b, grad_g) + 0.5 * np.einsum("mkl,mnkl->mn", a, hess_g)
    return out[0] if single else out
