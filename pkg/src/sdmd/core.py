"""Gram assembly, operator construction and spectral extraction.

The three estimators share one pair of empirical Gram matrices::

    G = (1/m) Psi_X^* Psi_X          H = (1/m) Psi_X^* Psi'_X

    sdmd   K = I + dt (G + gamma I)^{-1} H
    gedmd  A = (G + gamma I)^{-1} H
    edmd   K = (G + gamma I)^{-1} (1/m) Psi_X^* Psi_Y

Every solve goes through a Cholesky factor of ``G + gamma I``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .dictionary import Dictionary, generator_action
from .errors import DomainError, InvalidArgumentError, NumericalOverflowError, SingularGramError

__all__ = [
    "GramPair",
    "KoopmanApproximation",
    "SpectralResult",
    "ModeMatch",
    "assemble_data_matrices",
    "gram",
    "default_gamma",
    "sdmd_operator",
    "edmd_operator",
    "gedmd_operator",
    "spectrum",
    "operator_spectrum",
    "convert_eigs",
    "eigenfunction_eval",
    "match_modes",
    "export_spectrum",
    "export_gram",
]

GRAM_BLOCK = 4096
ASSEMBLY_BLOCK = 8192


def default_gamma(G) -> float:
    """Relative Tikhonov shift ``1e-8 * trace(G) / N``."""
    G = np.asarray(G)
    return 1e-8 * float(np.real(np.trace(G))) / G.shape[0]


def _cholesky(M):
    try:
        return sla.cholesky(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularGramError(
            f"Cholesky factorisation of G + gamma I failed ({exc}); increase gamma"
        ) from None


def _chol_solve(L, B):
    return sla.cho_solve((L, True), B, check_finite=False)


@dataclass(frozen=True, eq=False)
class GramPair:
    """Empirical Gram matrices with the regularisation they will be solved with.

    ``G_hat`` is symmetrised on construction and ``G_hat + gamma I`` must
    admit a Cholesky factor; otherwise :class:`SingularGramError` is raised.
    ``gamma=None`` selects :func:`default_gamma`.
    """

    G_hat: np.ndarray
    H_hat: np.ndarray
    m: int
    gamma: float | None = None
    delta_t: float | None = None
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        G = np.array(self.G_hat)
        H = np.array(self.H_hat)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or H.shape != G.shape:
            raise InvalidArgumentError(f"Gram shapes {G.shape} and {H.shape} are inconsistent")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(H))):
            raise NumericalOverflowError("Gram matrices have non-finite entries")
        G = 0.5 * (G + G.conj().T)
        gamma = default_gamma(G) if self.gamma is None else float(self.gamma)
        if gamma < 0:
            raise InvalidArgumentError("gamma must be non-negative")
        if self.delta_t is not None and not self.delta_t > 0:
            raise InvalidArgumentError("delta_t must be positive")
        G.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "G_hat", G)
        object.__setattr__(self, "H_hat", H)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "chol", _cholesky(self.regularized()))

    @property
    def size(self) -> int:
        return self.G_hat.shape[0]

    def regularized(self):
        return self.G_hat + self.gamma * np.eye(self.size)

    def solve(self, B):
        """``(G + gamma I)^{-1} B`` through the stored Cholesky factor."""
        return _chol_solve(self.chol, B)

    def with_delta_t(self, delta_t):
        return GramPair(self.G_hat, self.H_hat, self.m, self.gamma, delta_t)


@dataclass(frozen=True, eq=False)
class KoopmanApproximation:
    """A finite-dimensional semigroup or generator matrix.

    ``kind`` is ``"sdmd-semigroup"``, ``"edmd-semigroup"`` or
    ``"gedmd-generator"``.  For EDMD the stored ``gram.H_hat`` holds the
    cross matrix ``(1/m) Psi_X^* Psi_Y``.
    """

    matrix: np.ndarray
    kind: str
    delta_t: float | None
    gamma: float
    gram: GramPair | None = None
    dictionary: Dictionary | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """Eigenvalues ordered by descending ``|mu|`` with normalised coefficient columns.

    ``coeff_columns[:, k]`` holds the dictionary coefficients of mode ``k``,
    scaled to ``v^* G v = 1`` with the largest-magnitude entry real positive.
    """

    semigroup_eigs: np.ndarray | None
    generator_eigs: np.ndarray
    coeff_columns: np.ndarray
    mode: str
    delta_t: float | None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.generator_eigs)


@dataclass(frozen=True, eq=False)
class ModeMatch:
    """Greedy pairing between reference and estimated eigenvalues."""

    reference: np.ndarray
    estimate: np.ndarray
    estimate_index: np.ndarray
    errors: np.ndarray
    surplus: np.ndarray

    def as_rows(self):
        return [
            (complex(r), complex(e), int(i), float(err))
            for r, e, i, err in zip(self.reference, self.estimate, self.estimate_index, self.errors)
        ]


def _rows_of(dictionary, X, what, fn):
    """Evaluate ``fn`` over row blocks; failures are re-raised with the row index."""
    out = []
    for start in range(0, X.shape[0], ASSEMBLY_BLOCK):
        block = X[start : start + ASSEMBLY_BLOCK]
        try:
            vals = fn(block)
        except Exception as exc:
            row = start + _first_bad_row(block, fn)
            raise type(exc)(f"{what} failed at row {row}: {exc}") from exc
        bad = ~np.all(np.isfinite(vals), axis=1)
        if bad.any():
            row = start + int(np.flatnonzero(bad)[0])
            raise NumericalOverflowError(f"{what} is non-finite at row {row}", state=X[row], step=row)
        out.append(vals)
    return np.concatenate(out, axis=0) if out else np.empty((0, dictionary.size))


def _first_bad_row(block, fn):
    for i in range(block.shape[0]):
        try:
            fn(block[i : i + 1])
        except Exception:
            return i
    return 0


def assemble_data_matrices(dictionary: Dictionary, ensemble, model=None, need=("x", "prime", "y")):
    """Build ``(Psi_X, Psi_prime_X, Psi_Y)`` from snapshot pairs.

    Parameters
    ----------
    dictionary : Dictionary
    ensemble : SnapshotEnsemble or tuple
        Anything with ``x_points`` and ``y_points``, or an ``(X, Y)`` tuple.
    model : SdeModel, optional
        Drift/diffusion evaluator; needed only for ``Psi_prime_X``.
    need : iterable of {"x", "prime", "y"}
        Matrices to build.  Entries not requested come back as ``None``.
    """
    if isinstance(ensemble, tuple):
        X, Y = ensemble
    else:
        X, Y = ensemble.x_points, ensemble.y_points
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dictionary.dim:
        raise InvalidArgumentError(f"ensemble dimension {X.shape[1]} does not match dictionary dimension {dictionary.dim}")
    need = set(need)
    psi_x = _rows_of(dictionary, X, "dictionary evaluation", dictionary.evaluate) if "x" in need else None
    psi_p = None
    if "prime" in need:
        if model is None:
            raise InvalidArgumentError("Psi_prime_X needs drift and diffusion coefficients")
        psi_p = _rows_of(dictionary, X, "generator action", lambda B: generator_action(dictionary, model, B))
    psi_y = None
    if "y" in need:
        if Y is None:
            raise InvalidArgumentError("ensemble has no evolved points")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape != X.shape:
            raise InvalidArgumentError("x and y point sets differ in shape")
        psi_y = _rows_of(dictionary, Y, "dictionary evaluation", dictionary.evaluate)
    return psi_x, psi_p, psi_y


def _tree_sum(parts):
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _block_product(A, B, block, workers):
    """``A^* B`` summed over fixed row blocks in a fixed pairwise order."""
    starts = range(0, A.shape[0], block)

    def part(s):
        return A[s : s + block].conj().T @ B[s : s + block]

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(part, starts))
    else:
        parts = [part(s) for s in starts]
    if not parts:
        return np.zeros((A.shape[1], B.shape[1]), dtype=np.result_type(A, B))
    return _tree_sum(parts)


def gram(Psi_X, Psi_prime_X, m=None, gamma=None, delta_t=None, block=GRAM_BLOCK, workers=1) -> GramPair:
    """Empirical Gram pair ``(1/m) Psi_X^* Psi_X`` and ``(1/m) Psi_X^* Psi_prime_X``.

    Row blocks are reduced in a fixed tree order so the result does not
    depend on ``workers``.
    """
    Psi_X = np.asarray(Psi_X)
    Psi_prime_X = np.asarray(Psi_prime_X)
    if Psi_X.ndim != 2 or Psi_prime_X.shape != Psi_X.shape:
        raise InvalidArgumentError(f"data matrices have shapes {Psi_X.shape} and {Psi_prime_X.shape}")
    m = Psi_X.shape[0] if m is None else int(m)
    if m <= 0:
        raise InvalidArgumentError("sample count must be positive")
    G = _block_product(Psi_X, Psi_X, block, workers) / m
    H = _block_product(Psi_X, Psi_prime_X, block, workers) / m
    return GramPair(G, H, m, gamma, delta_t)


def sdmd_operator(gp: GramPair, delta_t=None) -> KoopmanApproximation:
    """``K = I + dt (G + gamma I)^{-1} H`` via the Cholesky factor of ``gp``."""
    dt = gp.delta_t if delta_t is None else float(delta_t)
    if dt is None or not dt > 0:
        raise InvalidArgumentError("sdmd operator needs a positive delta_t")
    if dt != gp.delta_t:
        gp = gp.with_delta_t(dt)
    K = np.eye(gp.size) + dt * gp.solve(gp.H_hat)
    return KoopmanApproximation(K, "sdmd-semigroup", dt, gp.gamma, gp)


def gedmd_operator(Psi_X, Psi_prime_X=None, gamma=None) -> KoopmanApproximation:
    """Generator matrix ``(G + gamma I)^{-1} H``; accepts data matrices or a ready ``GramPair``."""
    gp = Psi_X if isinstance(Psi_X, GramPair) else gram(Psi_X, Psi_prime_X, gamma=gamma)
    return KoopmanApproximation(gp.solve(gp.H_hat), "gedmd-generator", gp.delta_t, gp.gamma, gp)


def edmd_operator(Psi_X, Psi_Y, gamma=None, delta_t=None) -> KoopmanApproximation:
    """Least-squares semigroup matrix ``(G + gamma I)^{-1} (1/m) Psi_X^* Psi_Y``."""
    gp = gram(Psi_X, Psi_Y, gamma=gamma, delta_t=delta_t)
    return KoopmanApproximation(gp.solve(gp.H_hat), "edmd-semigroup", gp.delta_t, gp.gamma, gp)


def _sig(x, digits=12):
    return float(f"{x:.{digits - 1}e}") if np.isfinite(x) else x


def _normalize_columns(V, G):
    V = np.array(V, dtype=complex)
    for k in range(V.shape[1]):
        v = V[:, k]
        nrm2 = float(np.real(v.conj() @ G @ v))
        if not nrm2 > 1e-300:
            nrm2 = float(np.real(v.conj() @ v))
        v = v / np.sqrt(nrm2)
        j = int(np.argmax(np.abs(v)))
        v = v * (np.abs(v[j]) / v[j])
        V[:, k] = v
    return V


def _ordered(mu, lam, V, G, delta_t, mode, extra=None):
    if mu is not None:
        keys = [(-_sig(abs(u)), -_sig(u.real), _sig(u.imag)) for u in mu]
    else:
        keys = [(-_sig(v.real), _sig(v.imag), 0.0) for v in lam]
    order = sorted(range(len(lam)), key=lambda i: keys[i])
    meta = {"mode": mode, "ordering": "descending |mu|, then descending Re, then ascending Im"}
    meta.update(extra or {})
    return SpectralResult(
        None if mu is None else np.asarray(mu)[order],
        np.asarray(lam)[order],
        _normalize_columns(np.asarray(V)[:, order], G),
        mode,
        delta_t,
        meta,
    )


def _check_mode(mode):
    if mode not in ("linearized", "exponential"):
        raise InvalidArgumentError(f"mode must be 'linearized' or 'exponential', got {mode!r}")


def spectrum(gp: GramPair, mode: str = "linearized", delta_t=None) -> SpectralResult:
    """Solve ``H v = lambda (G + gamma I) v`` by Cholesky whitening.

    With a time step, ``mu = 1 + dt lambda`` are the eigenvalues of the
    SDMD matrix.  ``mode="linearized"`` reports the Galerkin ``lambda``;
    ``mode="exponential"`` reports ``log(mu)/dt`` instead.
    """
    _check_mode(mode)
    dt = gp.delta_t if delta_t is None else float(delta_t)
    L = gp.chol
    W = sla.solve_triangular(L, gp.H_hat.astype(complex), lower=True)
    W = sla.solve_triangular(L, W.conj().T, lower=True).conj().T  # L^{-1} H L^{-*}
    lam_gal, Wv = np.linalg.eig(W)
    V = sla.solve_triangular(L.conj().T, Wv, lower=False)
    mu = None
    lam = lam_gal
    if dt is not None:
        mu = 1.0 + dt * lam_gal
        if mode == "exponential":
            lam = convert_eigs(mu, dt, "semigroup->generator")
    elif mode == "exponential":
        raise InvalidArgumentError("exponential conversion needs delta_t")
    return _ordered(mu, lam, V, gp.G_hat, dt, mode, {"gamma": gp.gamma, "solver": "cholesky-whitened"})


def operator_spectrum(kop: KoopmanApproximation, mode: str = "linearized") -> SpectralResult:
    """Spectrum of any :class:`KoopmanApproximation`.

    SDMD and gEDMD share :func:`spectrum`.  EDMD solves the generalised
    problem ``C v = mu (G + gamma I) v`` and converts ``mu`` to generator
    values with ``(mu - 1)/dt`` or ``log(mu)/dt``.
    """
    _check_mode(mode)
    gp = kop.gram
    if gp is None:
        raise InvalidArgumentError("operator carries no Gram pair")
    if kop.kind in ("sdmd-semigroup", "gedmd-generator"):
        return spectrum(gp, mode, kop.delta_t)
    if kop.kind != "edmd-semigroup":
        raise InvalidArgumentError(f"unknown operator kind {kop.kind!r}")
    mu, V = sla.eig(gp.H_hat.astype(complex), gp.regularized().astype(complex))
    dt = kop.delta_t
    if dt is None:
        lam = mu.copy()
    elif mode == "linearized":
        lam = convert_eigs(mu, dt, "semigroup->generator-linear")
    else:
        lam = convert_eigs(mu, dt, "semigroup->generator")
    return _ordered(mu, lam, V, gp.G_hat, dt, mode, {"gamma": gp.gamma, "solver": "generalized-qz"})


_DIRECTIONS = {
    "generator->semigroup": "g2s",
    "generator→semigroup": "g2s",
    "semigroup->generator": "s2g",
    "semigroup→generator": "s2g",
    "semigroup->generator-linear": "s2g-lin",
    "generator->semigroup-linear": "g2s-lin",
}


def convert_eigs(values, delta_t: float, direction: str):
    """Convert eigenvalues between generator and semigroup.

    ``mu = exp(dt lambda)`` and ``lambda = log(mu)/dt`` (principal branch).
    The ``-linear`` directions use ``mu = 1 + dt lambda`` instead.
    """
    if not delta_t > 0:
        raise InvalidArgumentError("delta_t must be positive")
    kind = _DIRECTIONS.get(direction)
    if kind is None:
        raise InvalidArgumentError(f"unknown conversion direction {direction!r}")
    v = np.asarray(values, dtype=complex)
    if kind == "g2s":
        return np.exp(delta_t * v)
    if kind == "g2s-lin":
        return 1.0 + delta_t * v
    if kind == "s2g-lin":
        return (v - 1.0) / delta_t
    if np.any(v == 0):
        raise DomainError("semigroup eigenvalue 0 has no logarithm")
    return np.log(v) / delta_t


def eigenfunction_eval(dictionary: Dictionary, coeff_column, x):
    """``sum_j c_j psi_j(x)`` for one point or a batch."""
    c = np.asarray(coeff_column)
    if c.ndim != 1 or c.shape[0] != dictionary.size:
        raise InvalidArgumentError(f"coefficient vector must have length {dictionary.size}")
    return dictionary.evaluate(x) @ c


def match_modes(estimated, reference) -> ModeMatch:
    """Pair every reference eigenvalue with its nearest unused estimate.

    References are processed in ascending ``|lambda_ref|``; estimates left
    over are reported in ``surplus``.  ``estimated`` may be a
    :class:`SpectralResult` (its generator eigenvalues are used) or an array.
    """
    est = np.asarray(estimated.generator_eigs if isinstance(estimated, SpectralResult) else estimated, dtype=complex)
    ref = np.asarray(reference, dtype=complex).ravel()
    if est.size == 0 or ref.size == 0:
        raise InvalidArgumentError("match_modes needs non-empty inputs")
    used = np.zeros(est.size, dtype=bool)
    order = sorted(range(ref.size), key=lambda i: (abs(ref[i]), i))
    out_ref, out_est, out_idx, out_err = [], [], [], []
    for i in order:
        if used.all():
            break
        d = np.where(used, np.inf, np.abs(est - ref[i]))
        j = int(np.argmin(d))
        used[j] = True
        out_ref.append(ref[i])
        out_est.append(est[j])
        out_idx.append(j)
        out_err.append(float(d[j]))
    return ModeMatch(
        np.array(out_ref),
        np.array(out_est),
        np.array(out_idx, dtype=int),
        np.array(out_err),
        np.flatnonzero(~used),
    )


def _fmt(x):
    return "%.17g" % x


def _write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def export_spectrum(result: SpectralResult, directory, prefix="spectrum"):
    """Write ``<prefix>_eigs.csv`` and ``<prefix>_coeffs.csv``; returns both paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mu = result.semigroup_eigs
    lines = ["index,re_mu,im_mu,re_lambda,im_lambda"]
    for k, lam in enumerate(result.generator_eigs):
        u = mu[k] if mu is not None else complex("nan")
        lines.append(",".join([str(k), _fmt(u.real), _fmt(u.imag), _fmt(lam.real), _fmt(lam.imag)]))
    eig_path = d / f"{prefix}_eigs.csv"
    _write_text(eig_path, "\n".join(lines) + "\n")
    C = result.coeff_columns
    head = ["basis"] + [f"{p}_{k}" for k in range(C.shape[1]) for p in ("re", "im")]
    rows = [",".join(head)]
    for j in range(C.shape[0]):
        vals = [str(j)] + [_fmt(getattr(C[j, k], p)) for k in range(C.shape[1]) for p in ("real", "imag")]
        rows.append(",".join(vals))
    coef_path = d / f"{prefix}_coeffs.csv"
    _write_text(coef_path, "\n".join(rows) + "\n")
    return eig_path, coef_path


def _matrix_csv(M):
    M = np.asarray(M)
    if np.iscomplexobj(M):
        return "\n".join(",".join(f"{_fmt(z.real)}{'+' if z.imag >= 0 else '-'}{_fmt(abs(z.imag))}j" for z in row) for row in M) + "\n"
    return "\n".join(",".join(_fmt(v) for v in row) for row in M) + "\n"


def export_gram(gp: GramPair, directory, prefix="gram"):
    """Write ``G_hat`` and ``H_hat`` as CSV matrices plus a JSON metadata file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = (d / f"{prefix}_G.csv", d / f"{prefix}_H.csv", d / f"{prefix}_meta.json")
    _write_text(paths[0], _matrix_csv(gp.G_hat))
    _write_text(paths[1], _matrix_csv(gp.H_hat))
    meta = {"m": gp.m, "gamma": gp.gamma, "delta_t": gp.delta_t, "size": gp.size,
            "complex": bool(np.iscomplexobj(gp.G_hat) or np.iscomplexobj(gp.H_hat))}
    _write_text(paths[2], json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
