"""Euler-Maruyama integration and reproducible snapshot ensembles.

Randomness policy
-----------------
Every trajectory owns a ``numpy.random.Generator(PCG64(seed_k))`` with
``seed_k = mix_seed(base_seed, k)``, where :func:`mix_seed` is the
SplitMix64 finaliser.  Gaussian increments come from
``Generator.standard_normal`` (ziggurat).  Draws are consumed strictly in
integration order, so splitting trajectories across workers cannot change
any result.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalOverflowError
from .models import NeuralMass, SdeModel

__all__ = [
    "mix_seed",
    "rng_for",
    "SamplerSpec",
    "SnapshotEnsemble",
    "em_step",
    "simulate_trajectory",
    "sample_initial_states",
    "generate_ensemble",
    "markov_input_series",
    "export_ensemble",
    "import_ensemble",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
# fixed stream tags so sampler / input chains never collide with trajectory k
SAMPLER_STREAM = 0x5A3D_0001
INPUT_STREAM = 0x1A7E_0002


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(base_seed: int, k: int) -> int:
    """Derive the 64-bit seed of sub-stream ``k`` from ``base_seed`` (SplitMix64)."""
    return _splitmix64((int(base_seed) & _MASK64) ^ _splitmix64(int(k) & _MASK64))


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


@dataclass(frozen=True)
class SamplerSpec:
    """Initial-condition sampler.

    ``kind`` is ``"uniform-grid"`` (``counts`` = points per axis) or
    ``"uniform-random"`` (``counts`` = total number of points).  Axes listed
    as ``periodic`` omit the upper grid endpoint so that it does not
    duplicate the lower one.
    """

    kind: str
    domain: tuple
    counts: object
    periodic: tuple = ()

    def __post_init__(self):
        domain = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        object.__setattr__(self, "domain", domain)
        if self.kind not in ("uniform-grid", "uniform-random"):
            raise InvalidArgumentError(f"unknown sampler kind '{self.kind}'")
        for lo, hi in domain:
            if not hi > lo:
                raise InvalidArgumentError(f"degenerate sampling interval [{lo}, {hi}]")
        if self.kind == "uniform-grid":
            counts = tuple(int(c) for c in np.atleast_1d(self.counts))
            if len(counts) != len(domain):
                raise InvalidArgumentError("grid sampler needs one count per axis")
        else:
            counts = int(self.counts)
        if np.any(np.atleast_1d(counts) <= 0):
            raise InvalidArgumentError("sampler counts must be positive")
        object.__setattr__(self, "counts", counts)
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * len(domain)
        if len(periodic) != len(domain):
            raise InvalidArgumentError("periodic flags must match the number of axes")
        object.__setattr__(self, "periodic", periodic)

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts)) if self.kind == "uniform-grid" else int(self.counts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "domain": [list(iv) for iv in self.domain],
            "counts": list(self.counts) if isinstance(self.counts, tuple) else self.counts,
            "periodic": list(self.periodic),
        }


def sample_initial_states(sampler: SamplerSpec, seed: int) -> np.ndarray:
    """Initial states of shape ``(sampler.size, sampler.dim)``; grids in C order."""
    if sampler.kind == "uniform-grid":
        axes = [
            np.linspace(lo, hi, n, endpoint=not per)
            for (lo, hi), n, per in zip(sampler.domain, sampler.counts, sampler.periodic)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    rng = rng_for(mix_seed(seed, SAMPLER_STREAM))
    lo = np.array([iv[0] for iv in sampler.domain])
    hi = np.array([iv[1] for iv in sampler.domain])
    return lo + (hi - lo) * rng.random((sampler.size, sampler.dim))


@dataclass
class SnapshotEnsemble:
    """Pairs ``(x_k, y_k)`` with ``y_k`` the state ``delta_t`` after ``x_k``.

    ``trajectories`` (optional) has shape ``(n_traj, n_points, dim)``; it
    holds either the snapshot-resolution paths or, when sub-steps were
    kept, every integration step.  ``latent_inputs`` (neural-mass only)
    holds the input level at every integration step, shape
    ``(n_traj, n_steps)``.
    """

    x_points: np.ndarray
    y_points: np.ndarray
    delta_t: float
    substep: float
    seed: int
    trajectories: Optional[np.ndarray] = None
    latent_inputs: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_points = np.asarray(self.x_points, dtype=np.float64)
        self.y_points = np.asarray(self.y_points, dtype=np.float64)
        if self.x_points.shape != self.y_points.shape or self.x_points.ndim != 2:
            raise InvalidArgumentError("x_points and y_points must be matching (m, dim) arrays")
        if not self.delta_t > 0:
            raise InvalidArgumentError("delta_t must be positive")

    @property
    def m(self) -> int:
        return self.x_points.shape[0]

    @property
    def dim(self) -> int:
        return self.x_points.shape[1]

    @property
    def substeps(self) -> int:
        return int(round(self.delta_t / self.substep))


def _check_finite(X, step):
    if not np.all(np.isfinite(X)):
        bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
        raise NumericalOverflowError(
            f"non-finite state at step {step} (trajectory row {int(bad[0])})", state=X[bad[0]].copy(), step=step
        )


def _diffusion_increment(S, xi):
    # S: (B, d, d), xi: (B, d); fixed summation order keeps batches bitwise stable
    out = S[:, :, 0] * xi[:, 0, None]
    for k in range(1, xi.shape[1]):
        out = out + S[:, :, k] * xi[:, k, None]
    return out


def _drift_batch(model, X, current):
    if current is None:
        return model._drift(X)
    return model._drift(X, current)


def em_step(model: SdeModel, x, h: float, noise, current=None):
    """One Euler-Maruyama step ``x + b(x) h + sigma(x) sqrt(h) noise``."""
    if not h > 0:
        raise InvalidArgumentError("step size h must be positive")
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    xi = noise[None, :] if noise.ndim == 1 else noise
    if X.shape[1] != model.dim or xi.shape != X.shape:
        raise InvalidArgumentError("state and noise must both have the model dimension")
    out = X + _drift_batch(model, X, current) * h + _diffusion_increment(model._diffusion(X), xi) * math.sqrt(h)
    _check_finite(out, 0)
    return out[0] if single else out


def _integrate_batch(model, X0, h, substeps, n_eval, seeds, input_seeds, keep_substeps):
    """Integrate a block of trajectories; returns (snapshots, substep_path, inputs)."""
    B, d = X0.shape
    gens = [rng_for(s) for s in seeds]
    n_total = n_eval * substeps
    inputs = None
    if input_seeds is not None:
        inputs = np.stack(
            [markov_input_series(model.levels, model.stay_prob, n_total, s) for s in input_seeds], axis=0
        )
    snaps = np.empty((B, n_eval + 1, d))
    snaps[:, 0] = X0
    path = None
    if keep_substeps:
        path = np.empty((B, n_total + 1, d))
        path[:, 0] = X0
    sqrt_h = math.sqrt(h)
    X = X0.copy()
    step = 0
    for t in range(n_eval):
        noise = np.stack([g.standard_normal((substeps, d)) for g in gens], axis=1)
        for s in range(substeps):
            current = None if inputs is None else inputs[:, step]
            X = X + _drift_batch(model, X, current) * h + _diffusion_increment(model._diffusion(X), noise[s]) * sqrt_h
            step += 1
            _check_finite(X, step)
            if keep_substeps:
                path[:, step] = X
        snaps[:, t + 1] = X
    return snaps, path, inputs


def simulate_trajectory(model: SdeModel, x0, h: float, n_steps: int, seed: int, current=None):
    """Single Euler-Maruyama path of length ``n_steps + 1``.

    Deterministic in ``(model, x0, h, n_steps, seed)``; ``current`` pins a
    constant neural-mass input.
    """
    if n_steps < 1:
        raise InvalidArgumentError("n_steps must be >= 1")
    if not h > 0:
        raise InvalidArgumentError("step size h must be positive")
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, -1)
    if x0.shape[1] != model.dim:
        raise InvalidArgumentError("x0 does not match the model dimension")
    rng = rng_for(seed)
    noise = rng.standard_normal((n_steps, model.dim))
    path = np.empty((n_steps + 1, model.dim))
    path[0] = x0[0]
    X = x0
    sqrt_h = math.sqrt(h)
    cur = None if current is None else np.array([float(current)])
    for s in range(n_steps):
        X = X + _drift_batch(model, X, cur) * h + _diffusion_increment(model._diffusion(X), noise[s : s + 1]) * sqrt_h
        _check_finite(X, s + 1)
        path[s + 1] = X[0]
    return path


def generate_ensemble(
    model: SdeModel,
    sampler: SamplerSpec,
    delta_t: float,
    substeps: int,
    seed: int,
    n_eval: int = 1,
    keep_trajectories: bool = False,
    keep_substeps: bool = False,
    h: Optional[float] = None,
    workers: int = 1,
    initial_states: Optional[np.ndarray] = None,
) -> SnapshotEnsemble:
    """Simulate every sampled initial state for ``n_eval`` snapshot intervals.

    All consecutive ``(x_t, x_{t+delta_t})`` pairs along each trajectory are
    pooled, trajectory-major.  ``h`` (if given) must satisfy
    ``h * substeps == delta_t``.
    """
    substeps = int(substeps)
    n_eval = int(n_eval)
    if substeps < 1 or n_eval < 1:
        raise InvalidArgumentError("substeps and n_eval must be >= 1")
    if not delta_t > 0:
        raise InvalidArgumentError("delta_t must be positive")
    step = delta_t / substeps
    if h is not None and not math.isclose(h * substeps, delta_t, rel_tol=1e-12):
        raise InvalidArgumentError(f"delta_t={delta_t} is not substeps*h = {substeps}*{h}")
    if sampler.dim != model.dim:
        raise InvalidArgumentError(f"sampler dimension {sampler.dim} does not match model dimension {model.dim}")
    X0 = sample_initial_states(sampler, seed) if initial_states is None else np.asarray(initial_states, float)
    n_traj = X0.shape[0]
    seeds = [mix_seed(seed, k) for k in range(n_traj)]
    input_seeds = None
    if isinstance(model, NeuralMass):
        input_seeds = [mix_seed(seed ^ INPUT_STREAM, k) for k in range(n_traj)]

    workers = max(1, int(workers))
    bounds = np.linspace(0, n_traj, min(workers, n_traj) + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(chunk):
        a, b = chunk
        return _integrate_batch(
            model, X0[a:b], step, substeps, n_eval, seeds[a:b],
            None if input_seeds is None else input_seeds[a:b], keep_substeps,
        )

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    snaps = np.concatenate([p[0] for p in parts], axis=0)
    path = np.concatenate([p[1] for p in parts], axis=0) if keep_substeps else None
    inputs = np.concatenate([p[2] for p in parts], axis=0) if input_seeds is not None else None

    x_points = snaps[:, :-1].reshape(-1, model.dim)
    y_points = snaps[:, 1:].reshape(-1, model.dim)
    if keep_substeps:
        traj = path
    elif keep_trajectories or n_eval > 1:
        traj = snaps
    else:
        traj = None
    meta = {
        "model": model.name,
        "params": _jsonable(model.params()),
        "delta_t": delta_t,
        "substep": step,
        "substeps": substeps,
        "n_eval": n_eval,
        "seed": int(seed),
        "sampler": sampler.to_dict(),
        "rng": "PCG64 + ziggurat standard_normal; trajectory seed = splitmix64 mix(base, k)",
    }
    return SnapshotEnsemble(x_points, y_points, delta_t, step, int(seed), traj, inputs, meta)


def markov_input_series(levels: Sequence[float], stay_prob: float, n_steps: int, seed: int, initial: int = 0):
    """Two-state Markov chain over ``levels``; stays put with probability ``stay_prob`` per step."""
    if not 0.0 < stay_prob < 1.0:
        raise InvalidArgumentError("stay_prob must lie in (0, 1)")
    if len(levels) != 2:
        raise InvalidArgumentError("exactly two input levels are required")
    n_steps = int(n_steps)
    rng = rng_for(seed)
    u = rng.random(n_steps)
    switch = u >= stay_prob
    switch[0] = False
    state = (int(initial) + np.cumsum(switch)) % 2
    return np.asarray(levels, dtype=np.float64)[state]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def export_ensemble(ens: SnapshotEnsemble, directory, prefix: str = "ensemble"):
    """Write ``<prefix>_x.csv``, ``<prefix>_y.csv`` and ``<prefix>_meta.json``."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "x": os.path.join(directory, f"{prefix}_x.csv"),
        "y": os.path.join(directory, f"{prefix}_y.csv"),
        "meta": os.path.join(directory, f"{prefix}_meta.json"),
    }
    np.savetxt(paths["x"], ens.x_points, fmt="%.17g", delimiter=",")
    np.savetxt(paths["y"], ens.y_points, fmt="%.17g", delimiter=",")
    meta = dict(ens.metadata)
    meta.update({"delta_t": ens.delta_t, "substep": ens.substep, "seed": ens.seed, "m": ens.m, "dim": ens.dim})
    if ens.latent_inputs is not None:
        paths["inputs"] = os.path.join(directory, f"{prefix}_inputs.csv")
        np.savetxt(paths["inputs"], ens.latent_inputs.T, fmt="%.17g", delimiter=",")
    with open(paths["meta"], "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def import_ensemble(directory, prefix: str = "ensemble") -> SnapshotEnsemble:
    with open(os.path.join(directory, f"{prefix}_meta.json")) as fh:
        meta = json.load(fh)
    dim = int(meta["dim"])
    x = np.loadtxt(os.path.join(directory, f"{prefix}_x.csv"), delimiter=",", ndmin=2).reshape(-1, dim)
    y = np.loadtxt(os.path.join(directory, f"{prefix}_y.csv"), delimiter=",", ndmin=2).reshape(-1, dim)
    inputs = None
    ipath = os.path.join(directory, f"{prefix}_inputs.csv")
    if os.path.exists(ipath):
        inputs = np.loadtxt(ipath, delimiter=",", ndmin=2).T
    return SnapshotEnsemble(x, y, float(meta["delta_t"]), float(meta["substep"]), int(meta["seed"]),
                            latent_inputs=inputs, metadata=meta)
